use super::BBox;

/// Two boxes are "nearby" when the distance between their centres is at
/// most half the sum of their diagonals. Equality counts as nearby.
pub fn should_merge(a: &BBox, b: &BBox) -> bool {
    let (ax, ay) = a.center();
    let (bx, by) = b.center();
    (ax - bx).hypot(ay - by) <= a.diag() / 2.0 + b.diag() / 2.0
}

/// Canonical box order: area descending, then `(y0, x0)`.
pub fn canonical_order(boxes: &mut [BBox]) {
    boxes.sort_by(|a, b| {
        b.area()
            .cmp(&a.area())
            .then(a.y0.cmp(&b.y0))
            .then(a.x0.cmp(&b.x0))
            .then(a.y1.cmp(&b.y1))
            .then(a.x1.cmp(&b.x1))
    });
}

/// Repeatedly replaces the first nearby pair (in canonical order) with its
/// union until no pair is nearby. The result is in canonical order.
pub fn merge_nearby(boxes: &[BBox]) -> Vec<BBox> {
    let mut cur = boxes.to_vec();
    loop {
        canonical_order(&mut cur);
        let pair = (0..cur.len()).find_map(|i| {
            (i + 1..cur.len())
                .find(|&j| should_merge(&cur[i], &cur[j]))
                .map(|j| (i, j))
        });
        let Some((i, j)) = pair else { return cur };
        let merged = cur[i].union(&cur[j]);
        cur.remove(j);
        cur[i] = merged;
    }
}

/// True when no two boxes satisfy [`should_merge`].
pub fn is_merge_fixpoint(boxes: &[BBox]) -> bool {
    boxes
        .iter()
        .enumerate()
        .all(|(i, a)| boxes[i + 1..].iter().all(|b| !should_merge(a, b)))
}
