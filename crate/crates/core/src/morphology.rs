//! Binary dilation with a square (cubic) structuring element on row-major
//! masks of any rank.

/// Dilate `mask` (shape `dims`, last axis fastest) by `radius` voxels in the
/// Chebyshev metric. Pixels outside the array are treated as unset.
pub fn dilate(mask: &[bool], dims: &[usize], radius: usize) -> Vec<bool> {
    assert_eq!(mask.len(), dims.iter().product::<usize>(), "mask does not match dims");
    let mut cur = mask.to_vec();
    if radius == 0 {
        return cur;
    }
    let mut next = vec![false; cur.len()];
    for axis in 0..dims.len() {
        let n = dims[axis];
        let stride: usize = dims[axis + 1..].iter().product();
        for base in 0..cur.len() {
            // Visit each line once, from its first element.
            if (base / stride) % n != 0 {
                continue;
            }
            // Running count of set pixels within the window.
            let at = |i: usize| base + i * stride;
            let mut count = (0..radius.min(n)).filter(|&i| cur[at(i)]).count();
            for i in 0..n {
                if i + radius < n && cur[at(i + radius)] {
                    count += 1;
                }
                if i > radius && cur[at(i - radius - 1)] {
                    count -= 1;
                }
                next[at(i)] = count > 0;
            }
        }
        std::mem::swap(&mut cur, &mut next);
    }
    cur
}
