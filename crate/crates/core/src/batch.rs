use std::collections::BTreeMap;

/// Groups `order` (indices into `lengths`) into batches of equal length and at
/// most `batch_size` entries. Within a length, the incoming order is kept;
/// batches come out ordered by length, then position.
pub fn bucket_by_length(order: &[usize], lengths: &[usize], batch_size: usize) -> Vec<Vec<usize>> {
    let mut by_len: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &i in order {
        by_len.entry(lengths[i]).or_default().push(i);
    }
    by_len
        .into_values()
        .flat_map(|idx| {
            idx.chunks(batch_size.max(1))
                .map(<[usize]>::to_vec)
                .collect::<Vec<_>>()
        })
        .collect()
}
