use std::collections::{BTreeSet, VecDeque};

use polypseg::postprocess::BinaryMask;

/// Offsets of the disk `dx^2 + dy^2 <= (k/2)^2`.
pub fn disk(k: usize) -> Vec<(isize, isize)> {
    let r = (k / 2) as isize;
    let rr = (k as f64 / 2.0).powi(2);
    let mut v = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if ((dx * dx + dy * dy) as f64) <= rr {
                v.push((dy, dx));
            }
        }
    }
    v
}

pub fn at(m: &BinaryMask, y: isize, x: isize) -> Option<bool> {
    let (h, w) = m.dims();
    (y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w).then(|| m.get(y as usize, x as usize))
}

/// Minkowski dilation: some element offset lands on foreground.
pub fn dilate_ref(m: &BinaryMask, b: &[(isize, isize)]) -> BinaryMask {
    let (h, w) = m.dims();
    BinaryMask::from_fn(h, w, |y, x| {
        b.iter().any(|&(dy, dx)| at(m, y as isize - dy, x as isize - dx) == Some(true))
    })
}

/// Minkowski erosion; the outside of the image counts as foreground.
pub fn erode_ref(m: &BinaryMask, b: &[(isize, isize)]) -> BinaryMask {
    let (h, w) = m.dims();
    BinaryMask::from_fn(h, w, |y, x| {
        b.iter().all(|&(dy, dx)| at(m, y as isize + dy, x as isize + dx) != Some(false))
    })
}

/// 8-connected components by breadth-first search.
pub fn bfs_partition(m: &BinaryMask) -> BTreeSet<BTreeSet<(usize, usize)>> {
    let (h, w) = m.dims();
    let mut seen = vec![false; h * w];
    let mut parts = BTreeSet::new();
    for (y, x) in m.iter_set() {
        if seen[y * w + x] {
            continue;
        }
        let mut part = BTreeSet::new();
        let mut q = VecDeque::from([(y, x)]);
        seen[y * w + x] = true;
        while let Some((cy, cx)) = q.pop_front() {
            part.insert((cy, cx));
            for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    let (ny, nx) = (cy as isize + dy, cx as isize + dx);
                    if at(m, ny, nx) == Some(true) && !seen[ny as usize * w + nx as usize] {
                        seen[ny as usize * w + nx as usize] = true;
                        q.push_back((ny as usize, nx as usize));
                    }
                }
            }
        }
        parts.insert(part);
    }
    parts
}
