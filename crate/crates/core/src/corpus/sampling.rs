use super::{BaseCorpus, CorpusError, LabeledImageSet, Record, Split};
use crate::rng::SplitMix64;

/// Draw `n` training records. Balanced mode takes `n / L` per class.
pub fn draw_step_samples(corpus: &BaseCorpus, n: usize, balanced: bool, seed: u64) -> Result<LabeledImageSet, CorpusError> {
    draw_samples(corpus, Split::Train, n, balanced, &mut SplitMix64::new(seed), 0, |_| true)
}

/// General draw from one split of `corpus`, restricted to records accepted by `keep`.
///
/// Draws are without replacement within the call. Balanced draws are
/// class-blocked and then shuffled so minibatches are mixed.
pub fn draw_samples(
    corpus: &BaseCorpus,
    split: Split,
    n: usize,
    balanced: bool,
    rng: &mut SplitMix64,
    step_index: usize,
    keep: impl Fn(&Record) -> bool,
) -> Result<LabeledImageSet, CorpusError> {
    let records = corpus.records(split);
    let classes = corpus.num_classes;
    let eligible: Vec<usize> = (0..records.len()).filter(|&i| keep(&records[i])).collect();
    if n > eligible.len() {
        return Err(CorpusError::TooLarge { requested: n, available: eligible.len() });
    }
    let mut chosen = if balanced {
        if !n.is_multiple_of(classes) {
            return Err(CorpusError::Unbalanced { n, classes });
        }
        let per = n / classes;
        let mut by_class = vec![Vec::new(); classes];
        for &i in &eligible {
            by_class[records[i].label as usize].push(i);
        }
        let mut out = Vec::with_capacity(n);
        for (class, pool) in by_class.iter().enumerate() {
            if pool.len() < per {
                return Err(CorpusError::ClassTooSmall { class, requested: per, available: pool.len() });
            }
            out.extend(rng.sample_without_replacement(pool, per));
        }
        out
    } else {
        rng.sample_without_replacement(&eligible, n)
    };
    rng.shuffle(&mut chosen);

    let fine = corpus.has_fine_labels().then(|| chosen.iter().map(|&i| records[i].fine_label.unwrap_or(0) as usize).collect());
    Ok(LabeledImageSet {
        images: chosen.iter().map(|&i| records[i].image.clone()).collect(),
        labels: chosen.iter().map(|&i| records[i].label as usize).collect(),
        fine_labels: fine,
        source_ids: chosen,
        step_index,
        split,
        num_classes: classes,
    })
}

/// Random disjoint partition with `|val| = round(val_fraction * |set|)`.
/// Both parts keep the input order.
pub fn split_train_val(
    set: &LabeledImageSet,
    val_fraction: f64,
    seed: u64,
) -> Result<(LabeledImageSet, LabeledImageSet), CorpusError> {
    if !(0.0..1.0).contains(&val_fraction) {
        return Err(CorpusError::BadFraction(val_fraction));
    }
    let n = set.len();
    let n_val = (val_fraction * n as f64).round() as usize;
    let all: Vec<usize> = (0..n).collect();
    let mut is_val = vec![false; n];
    for i in SplitMix64::new(seed).sample_without_replacement(&all, n_val) {
        is_val[i] = true;
    }
    let train_idx: Vec<usize> = all.iter().copied().filter(|&i| !is_val[i]).collect();
    let val_idx: Vec<usize> = all.iter().copied().filter(|&i| is_val[i]).collect();
    let mut train = set.select(&train_idx);
    let mut val = set.select(&val_idx);
    train.split = Split::Train;
    val.split = Split::Val;
    Ok((train, val))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::synthetic::{synthetic_cifar10, SyntheticConfig};

    fn corpus() -> BaseCorpus {
        synthetic_cifar10(&SyntheticConfig { train_per_class: 60, test_per_class: 10, ..SyntheticConfig::default() })
    }

    #[test]
    fn zero_draw_is_empty() {
        assert!(draw_step_samples(&corpus(), 0, true, 1).unwrap().is_empty());
    }

    #[test]
    fn draws_are_deterministic_and_balanced() {
        let c = corpus();
        let a = draw_step_samples(&c, 200, true, 9).unwrap();
        let b = draw_step_samples(&c, 200, true, 9).unwrap();
        assert_eq!(a.source_ids, b.source_ids);
        assert_eq!(a.class_counts(), vec![20; 10]);
        assert!(a.check_invariants());
    }

    #[test]
    fn oversized_draws_fail() {
        assert!(matches!(draw_step_samples(&corpus(), 601, false, 0), Err(CorpusError::TooLarge { .. })));
        assert!(matches!(draw_step_samples(&corpus(), 15, true, 0), Err(CorpusError::Unbalanced { .. })));
    }

    #[test]
    fn split_sizes_and_disjointness() {
        let c = corpus();
        let s = draw_step_samples(&c, 500, true, 3).unwrap();
        let (tr, va) = split_train_val(&s, 0.2, 4).unwrap();
        assert_eq!((tr.len(), va.len()), (400, 100));
        assert!(tr.source_ids.iter().all(|id| !va.source_ids.contains(id)));
        let (tr0, va0) = split_train_val(&s, 0.0, 4).unwrap();
        assert_eq!((tr0.len(), va0.len()), (500, 0));
        assert!(split_train_val(&s, 1.0, 0).is_err());
    }
}
