//! Class prototypes: the mean over every (kept) local descriptor of every
//! support sample of a class.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::CompensatedSum;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassPrototype {
    pub class_index: usize,
    pub vector: Vec<f32>,
    pub source_count: usize,
}

/// Mean of `descriptors`. An empty list is a degenerate class.
pub fn class_prototype<'a, I>(descriptors: I, class_index: usize) -> Result<ClassPrototype>
where
    I: IntoIterator<Item = &'a [f32]>,
{
    let mut sums: Vec<CompensatedSum> = Vec::new();
    let mut count = 0usize;
    for d in descriptors {
        if sums.is_empty() {
            sums = vec![CompensatedSum::default(); d.len()];
        }
        assert_eq!(d.len(), sums.len(), "descriptors of differing dimension");
        for (s, &v) in sums.iter_mut().zip(d) {
            s.add(v as f64);
        }
        count += 1;
    }
    if count == 0 {
        return Err(Error::DegenerateClass { class_index });
    }
    Ok(ClassPrototype {
        class_index,
        vector: sums
            .iter()
            .map(|s| (s.value() / count as f64) as f32)
            .collect(),
        source_count: count,
    })
}

/// One support sample as seen by the prototype and filter stages.
pub trait SupportView {
    fn class_index(&self) -> usize;
    fn descriptor(&self, index: usize) -> &[f32];
}

/// Prototypes for classes `0..n_way` over the kept descriptors of each support sample.
/// `kept[s]` lists the retained descriptor indices of `support[s]`.
pub fn all_prototypes<S: SupportView>(
    support: &[S],
    kept: &[Vec<usize>],
    n_way: usize,
) -> Result<Vec<ClassPrototype>> {
    assert_eq!(support.len(), kept.len(), "one kept set per support sample");
    (0..n_way)
        .map(|class| {
            let descriptors = support
                .iter()
                .zip(kept)
                .filter(|(s, _)| s.class_index() == class)
                .flat_map(|(s, k)| k.iter().map(move |&i| s.descriptor(i)));
            class_prototype(descriptors, class)
        })
        .collect()
}
