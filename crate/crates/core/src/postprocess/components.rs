use super::{BBox, BinaryMask};

/// Maximal 8-connected set of foreground pixels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Component {
    /// `(y, x)` in raster order.
    pub pixels: Vec<(usize, usize)>,
    pub area: usize,
    pub bbox: BBox,
}

fn find(parent: &mut [u32], mut a: u32) -> u32 {
    while parent[a as usize] != a {
        let p = parent[a as usize];
        parent[a as usize] = parent[p as usize];
        a = p;
    }
    a
}

fn union(parent: &mut [u32], a: u32, b: u32) {
    let (ra, rb) = (find(parent, a), find(parent, b));
    if ra != rb {
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        parent[hi as usize] = lo;
    }
}

/// Two-pass union-find labelling with 8-connectivity.
///
/// Components are ordered by `(min y, min x)` of their pixels; ties keep
/// the raster order of each component's first pixel.
pub fn label_components(mask: &BinaryMask) -> Vec<Component> {
    let (h, w) = mask.dims();
    const NONE: u32 = u32::MAX;
    let mut labels = vec![NONE; h * w];
    let mut parent: Vec<u32> = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if !mask.get(y, x) {
                continue;
            }
            let mut neigh = [NONE; 4];
            if x > 0 {
                neigh[0] = labels[y * w + x - 1];
            }
            if y > 0 {
                let up = (y - 1) * w;
                if x > 0 {
                    neigh[1] = labels[up + x - 1];
                }
                neigh[2] = labels[up + x];
                if x + 1 < w {
                    neigh[3] = labels[up + x + 1];
                }
            }
            let mut lab = NONE;
            for &n in neigh.iter().filter(|&&n| n != NONE) {
                if lab == NONE {
                    lab = n;
                } else {
                    union(&mut parent, lab, n);
                }
            }
            if lab == NONE {
                lab = parent.len() as u32;
                parent.push(lab);
            }
            labels[y * w + x] = lab;
        }
    }

    let mut slot = vec![NONE; parent.len()];
    let mut comps: Vec<Component> = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let l = labels[y * w + x];
            if l == NONE {
                continue;
            }
            let root = find(&mut parent, l) as usize;
            if slot[root] == NONE {
                slot[root] = comps.len() as u32;
                comps.push(Component {
                    pixels: Vec::new(),
                    area: 0,
                    bbox: BBox::new(x, y, x, y),
                });
            }
            let c = &mut comps[slot[root] as usize];
            c.pixels.push((y, x));
            c.area += 1;
            c.bbox = c.bbox.union(&BBox::new(x, y, x, y));
        }
    }
    comps.sort_by_key(|c| (c.bbox.y0, c.bbox.x0));
    comps
}

/// Reference image side at which area thresholds are stated.
pub const REFERENCE_SIDE: usize = 384;

/// Area threshold for an `h x w` image, scaled from one given at 384x384.
pub fn scaled_min_area(min_area: usize, h: usize, w: usize) -> usize {
    let scale = (h * w) as f64 / (REFERENCE_SIDE * REFERENCE_SIDE) as f64;
    (min_area as f64 * scale).round() as usize
}

/// Keeps components with `area >= min_area`.
pub fn drop_small(components: Vec<Component>, min_area: usize) -> Vec<Component> {
    components.into_iter().filter(|c| c.area >= min_area).collect()
}
