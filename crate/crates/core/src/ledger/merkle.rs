use crate::digest::{digest_parts, Digest32};

use super::LedgerError;

/// Binary Merkle root over `leaves` in order.
///
/// An odd node at any level is paired with itself; a single leaf is its own
/// root.
pub fn merkle_root(leaves: &[Digest32]) -> Result<Digest32, LedgerError> {
    if leaves.is_empty() {
        return Err(LedgerError::EmptyLeafSet);
    }
    let mut level: Vec<Digest32> = leaves.to_vec();
    while level.len() > 1 {
        level = level
            .chunks(2)
            .map(|pair| {
                let left = &pair[0];
                let right = pair.get(1).unwrap_or(left);
                digest_parts(&[left.as_bytes(), right.as_bytes()])
            })
            .collect();
    }
    Ok(level[0])
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::digest::digest;

    fn node(a: &Digest32, b: &Digest32) -> Digest32 {
        let mut buf = a.as_bytes().to_vec();
        buf.extend_from_slice(b.as_bytes());
        digest(&buf)
    }

    #[test]
    fn empty_is_an_error() {
        assert!(matches!(merkle_root(&[]), Err(LedgerError::EmptyLeafSet)));
    }

    #[test]
    fn single_leaf_is_root() {
        let d = digest(b"a");
        assert_eq!(merkle_root(&[d]).unwrap(), d);
    }

    #[test]
    fn order_matters() {
        let (a, b) = (digest(b"a"), digest(b"b"));
        assert_ne!(merkle_root(&[a, b]).unwrap(), merkle_root(&[b, a]).unwrap());
        assert_eq!(merkle_root(&[a, b]).unwrap(), node(&a, &b));
    }

    #[test]
    fn three_leaves_duplicate_the_last() {
        let (a, b, c) = (digest(b"a"), digest(b"b"), digest(b"c"));
        // Hand-built four-leaf tree with c repeated.
        let expected = node(&node(&a, &b), &node(&c, &c));
        assert_eq!(merkle_root(&[a, b, c]).unwrap(), expected);
        assert_eq!(merkle_root(&[a, b, c, c]).unwrap(), expected);
    }

    #[test]
    fn five_leaves_by_hand() {
        let l: Vec<_> = (0..5u8).map(|i| digest(&[i])).collect();
        let left = node(&node(&l[0], &l[1]), &node(&l[2], &l[3]));
        let e = node(&l[4], &l[4]);
        let right = node(&e, &e);
        assert_eq!(merkle_root(&l).unwrap(), node(&left, &right));
    }

    proptest! {
        #[test]
        fn swapping_distinct_leaves_changes_root(n in 2usize..16, i in 0usize..16, j in 0usize..16) {
            let leaves: Vec<_> = (0..n).map(|k| digest(&(k as u64).to_be_bytes())).collect();
            let (i, j) = (i % n, j % n);
            prop_assume!(i != j);
            let mut swapped = leaves.clone();
            swapped.swap(i, j);
            prop_assert_ne!(merkle_root(&leaves).unwrap(), merkle_root(&swapped).unwrap());
        }
    }
}
