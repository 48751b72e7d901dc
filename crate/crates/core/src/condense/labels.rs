use crate::error::{Error, Result};

/// Condensed node count `round(r · labelled)`.
pub fn condensed_size(labelled: usize, ratio: f64) -> Result<usize> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::InvalidArgument(format!("ratio must lie in (0, 1], got {ratio}")));
    }
    if labelled == 0 {
        return Err(Error::NoLabeledNodes);
    }
    let m = (ratio * labelled as f64).round() as usize;
    if m == 0 {
        return Err(Error::InvalidArgument(format!(
            "ratio {ratio} of {labelled} labelled nodes rounds to zero condensed nodes"
        )));
    }
    Ok(m)
}

/// Largest-remainder apportionment of `m` seats over class sizes. Ties go to
/// the lower class index; every nonempty class ends with at least one seat.
pub fn apportion(class_sizes: &[usize], m: usize) -> Result<Vec<usize>> {
    let total: usize = class_sizes.iter().sum();
    if total == 0 {
        return Err(Error::NoLabeledNodes);
    }
    let nonempty = class_sizes.iter().filter(|&&s| s > 0).count();
    if m < nonempty {
        return Err(Error::InvalidArgument(format!(
            "{m} condensed nodes cannot cover {nonempty} nonempty classes"
        )));
    }
    // exact integer quotas: m·s / total = floor + rem / total
    let mut counts: Vec<usize> = class_sizes.iter().map(|&s| m * s / total).collect();
    let rems: Vec<usize> = class_sizes.iter().map(|&s| m * s % total).collect();
    let mut order: Vec<usize> = (0..class_sizes.len()).collect();
    order.sort_by(|&a, &b| rems[b].cmp(&rems[a]).then(a.cmp(&b)));
    let assigned: usize = counts.iter().sum();
    for &c in order.iter().take(m - assigned) {
        counts[c] += 1;
    }
    for c in 0..class_sizes.len() {
        if class_sizes[c] > 0 && counts[c] == 0 {
            let donor = (0..counts.len())
                .max_by(|&a, &b| counts[a].cmp(&counts[b]).then(b.cmp(&a)))
                .expect("at least one class");
            counts[donor] -= 1;
            counts[c] = 1;
        }
    }
    Ok(counts)
}

/// Label vector of the condensed graph, grouped by class in index order.
pub fn assign_labels(labels: &[usize], num_classes: usize, ratio: f64) -> Result<Vec<usize>> {
    let mut sizes = vec![0usize; num_classes];
    for &y in labels {
        if y >= num_classes {
            return Err(Error::IndexOutOfRange {
                index: y,
                len: num_classes,
            });
        }
        sizes[y] += 1;
    }
    let m = condensed_size(labels.len(), ratio)?;
    let counts = apportion(&sizes, m)?;
    Ok(counts
        .iter()
        .enumerate()
        .flat_map(|(c, &k)| std::iter::repeat_n(c, k))
        .collect())
}

pub fn class_counts(labels: &[usize], num_classes: usize) -> Vec<usize> {
    let mut counts = vec![0; num_classes];
    for &y in labels {
        counts[y] += 1;
    }
    counts
}
