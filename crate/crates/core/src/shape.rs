//! Shape arithmetic shared by the graph builder and the evaluator.

/// Right-aligned broadcast of two shapes; a dimension of 1 stretches.
pub fn broadcast(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for (i, o) in out.iter_mut().enumerate() {
        let da = dim_from_right(a, rank - 1 - i);
        let db = dim_from_right(b, rank - 1 - i);
        *o = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

fn dim_from_right(s: &[usize], from_right: usize) -> usize {
    if from_right < s.len() {
        s[s.len() - 1 - from_right]
    } else {
        1
    }
}

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// For each flat index of `out`, the flat index of the broadcast operand.
pub fn broadcast_index(src: &[usize], out: &[usize]) -> Vec<usize> {
    let n = numel(out);
    if src == out {
        return (0..n).collect();
    }
    if numel(src) == 1 {
        return vec![0; n];
    }
    let rank = out.len();
    let padded: Vec<usize> = (0..rank)
        .map(|i| dim_from_right(src, rank - 1 - i))
        .collect();
    let mut src_strides = vec![0usize; rank];
    let mut acc = 1;
    for i in (0..rank).rev() {
        src_strides[i] = if padded[i] == 1 { 0 } else { acc };
        acc *= padded[i];
    }
    let mut idx = vec![0usize; rank];
    let mut map = Vec::with_capacity(n);
    for _ in 0..n {
        map.push(idx.iter().zip(&src_strides).map(|(i, s)| i * s).sum());
        for d in (0..rank).rev() {
            idx[d] += 1;
            if idx[d] < out[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    map
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcasting() {
        assert_eq!(broadcast(&[2, 3], &[2, 3]), Some(vec![2, 3]));
        assert_eq!(broadcast(&[2, 3], &[1]), Some(vec![2, 3]));
        assert_eq!(broadcast(&[2, 1], &[2, 3]), Some(vec![2, 3]));
        assert_eq!(broadcast(&[1, 3], &[4, 1]), Some(vec![4, 3]));
        assert_eq!(broadcast(&[2, 3], &[3, 2]), None);
    }

    #[test]
    fn index_maps() {
        assert_eq!(broadcast_index(&[2, 1], &[2, 3]), vec![0, 0, 0, 1, 1, 1]);
        assert_eq!(broadcast_index(&[1, 3], &[2, 3]), vec![0, 1, 2, 0, 1, 2]);
        assert_eq!(broadcast_index(&[3], &[2, 3]), vec![0, 1, 2, 0, 1, 2]);
        assert_eq!(broadcast_index(&[1], &[2, 2]), vec![0; 4]);
    }
}
