//! Retrieval metrics: N-S score, average precision, top-k hit rate.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::features::ImageRecord;
use crate::query::RankedList;

/// Group membership of every image; images sharing a group are relevant to
/// each other.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GroundTruth {
    group_of: BTreeMap<u32, u32>,
    members: BTreeMap<u32, Vec<u32>>,
}

impl GroundTruth {
    pub fn from_pairs<I: IntoIterator<Item = (u32, u32)>>(pairs: I) -> Result<Self> {
        let mut gt = GroundTruth::default();
        for (image, group) in pairs {
            if gt.group_of.insert(image, group).is_some() {
                return Err(Error::DuplicateImage(image));
            }
            gt.members.entry(group).or_default().push(image);
        }
        for m in gt.members.values_mut() {
            m.sort_unstable();
        }
        Ok(gt)
    }

    pub fn from_corpus(corpus: &[ImageRecord]) -> Result<Self> {
        Self::from_pairs(corpus.iter().map(|r| (r.image_id, r.group_id)))
    }

    pub fn group_of(&self, image_id: u32) -> Option<u32> {
        self.group_of.get(&image_id).copied()
    }

    /// Every image in the query's group, the query included.
    pub fn group_members(&self, image_id: u32) -> &[u32] {
        self.group_of(image_id)
            .and_then(|g| self.members.get(&g))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn is_relevant(&self, query_id: u32, image_id: u32) -> bool {
        match (self.group_of(query_id), self.group_of(image_id)) {
            (Some(a), Some(b)) => a == b,
            _ => false,
        }
    }

    pub fn len(&self) -> usize {
        self.group_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.group_of.is_empty()
    }

    /// Text form: one `image_id group_id` pair per line, `#` comments allowed.
    pub fn to_text(&self) -> String {
        let mut s = String::from("# image_id group_id\n");
        for (i, g) in &self.group_of {
            s.push_str(&format!("{i} {g}\n"));
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut it = line.split_whitespace().map(str::parse::<u32>);
            match (it.next(), it.next(), it.next()) {
                (Some(Ok(i)), Some(Ok(g)), None) => pairs.push((i, g)),
                _ => {
                    return Err(Error::format(format!(
                        "truth line {}: expected two integers",
                        n + 1
                    )))
                }
            }
        }
        Self::from_pairs(pairs)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(fs::write(path, self.to_text())?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingInput(path.to_path_buf()));
        }
        Self::parse(&fs::read_to_string(path)?)
    }
}

/// Relevant images among the top four, the query counting as a result when
/// it was retrieved. Needs groups of exactly four.
pub fn ns_score(ranked: &RankedList, truth: &GroundTruth) -> Result<f64> {
    let size = truth.group_members(ranked.query_id).len();
    if size != 4 {
        return Err(Error::MetricInapplicable(format!(
            "N-S score needs groups of 4, query {} has {size}",
            ranked.query_id
        )));
    }
    Ok(ranked
        .ids()
        .take(4)
        .filter(|&id| truth.is_relevant(ranked.query_id, id))
        .count() as f64)
}

/// Average precision with the query removed from its own ranking. `None`
/// when the query has no other relevant image.
pub fn average_precision(ranked: &RankedList, truth: &GroundTruth) -> Option<f64> {
    let q = ranked.query_id;
    let n_relevant = truth.group_members(q).iter().filter(|&&id| id != q).count();
    if n_relevant == 0 {
        return None;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, id) in ranked.ids().filter(|&id| id != q).enumerate() {
        if truth.is_relevant(q, id) {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Some(sum / n_relevant as f64)
}

/// Mean over the queries that have an AP; skipped queries are logged.
pub fn mean_average_precision(aps: &[Option<f64>]) -> Option<f64> {
    let skipped = aps.iter().filter(|a| a.is_none()).count();
    if skipped > 0 {
        log::warn!("{skipped} queries without relevant images skipped in mAP");
    }
    let vals: Vec<f64> = aps.iter().flatten().copied().collect();
    if vals.is_empty() {
        None
    } else {
        Some(vals.iter().sum::<f64>() / vals.len() as f64)
    }
}

/// 1 if any relevant image other than the query is in the top `k`, else 0.
pub fn top_k_precision(ranked: &RankedList, truth: &GroundTruth, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::Config("top-k needs k >= 1".into()));
    }
    let q = ranked.query_id;
    let hit = ranked
        .ids()
        .filter(|&id| id != q)
        .take(k)
        .any(|id| truth.is_relevant(q, id));
    Ok(if hit { 1.0 } else { 0.0 })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Four groups of four: images 4g..4g+3 belong to group g.
    fn ukbench() -> GroundTruth {
        GroundTruth::from_pairs((0..16).map(|i| (i, i / 4))).unwrap()
    }

    fn list(q: u32, ids: &[u32]) -> RankedList {
        let n = ids.len() as f64;
        RankedList::new(
            q,
            ids.iter()
                .enumerate()
                .map(|(r, &id)| (id, n - r as f64))
                .collect(),
        )
    }

    #[test]
    fn ns_examples() {
        let gt = ukbench();
        assert_eq!(ns_score(&list(0, &[0, 1, 2, 3, 4]), &gt).unwrap(), 4.0);
        assert_eq!(ns_score(&list(0, &[0, 5, 2, 9, 1]), &gt).unwrap(), 2.0);
        assert_eq!(ns_score(&list(0, &[]), &gt).unwrap(), 0.0);
        let odd = GroundTruth::from_pairs([(0, 0), (1, 0), (2, 1)]).unwrap();
        assert!(matches!(
            ns_score(&list(0, &[0, 1]), &odd),
            Err(Error::MetricInapplicable(_))
        ));
    }

    #[test]
    fn ns_is_four_times_recall_at_four() {
        let gt = ukbench();
        let r = list(5, &[5, 0, 6, 12, 7]);
        let recall = r.ids().take(4).filter(|&i| gt.is_relevant(5, i)).count() as f64 / 4.0;
        assert_eq!(ns_score(&r, &gt).unwrap(), 4.0 * recall);
    }

    #[test]
    fn ap_examples() {
        let gt = GroundTruth::from_pairs([(0, 0), (1, 0), (2, 1), (3, 2)]).unwrap();
        assert_eq!(average_precision(&list(0, &[0, 1, 2]), &gt), Some(1.0));
        assert_eq!(average_precision(&list(0, &[2, 1]), &gt), Some(0.5));
        let gt2 = GroundTruth::from_pairs([(0, 0), (1, 0), (2, 1), (3, 0)]).unwrap();
        let ap = average_precision(&list(0, &[1, 2, 3]), &gt2).unwrap();
        assert!((ap - 5.0 / 6.0).abs() < 1e-15);
        assert_eq!(average_precision(&list(2, &[0, 1]), &gt2), None);
    }

    #[test]
    fn ap_ignores_score_values() {
        let gt = ukbench();
        let a = RankedList::new(0, vec![(1, 9.0), (7, 5.0), (2, 1.0)]);
        let b = RankedList::new(0, vec![(1, 0.3), (7, 0.2), (2, 0.1)]);
        assert_eq!(average_precision(&a, &gt), average_precision(&b, &gt));
    }

    #[test]
    fn perfect_run() {
        let gt = ukbench();
        let mut ns = 0.0;
        let mut aps = Vec::new();
        for q in 0..16u32 {
            let g = q / 4;
            let mut ids: Vec<u32> = vec![q];
            ids.extend((4 * g..4 * g + 4).filter(|&i| i != q));
            ids.extend((0..16).filter(|i| i / 4 != g));
            let r = list(q, &ids);
            ns += ns_score(&r, &gt).unwrap();
            aps.push(average_precision(&r, &gt));
        }
        assert_eq!(ns / 16.0, 4.0);
        assert_eq!(mean_average_precision(&aps), Some(1.0));
    }

    #[test]
    fn top_k_examples() {
        let gt = ukbench();
        assert_eq!(top_k_precision(&list(0, &[1, 5]), &gt, 1).unwrap(), 1.0);
        assert_eq!(top_k_precision(&list(0, &[5, 1]), &gt, 1).unwrap(), 0.0);
        assert_eq!(
            top_k_precision(&list(0, &[4, 5, 6, 7, 8, 9, 1]), &gt, 10).unwrap(),
            1.0
        );
        // The query itself is not a hit.
        assert_eq!(top_k_precision(&list(0, &[0, 5]), &gt, 1).unwrap(), 0.0);
        assert!(top_k_precision(&list(0, &[]), &gt, 0).is_err());
    }

    #[test]
    fn map_skips_undefined() {
        assert_eq!(
            mean_average_precision(&[Some(1.0), None, Some(0.5)]),
            Some(0.75)
        );
        assert_eq!(mean_average_precision(&[None]), None);
    }

    #[test]
    fn truth_text_round_trip() {
        let gt = ukbench();
        assert_eq!(GroundTruth::parse(&gt.to_text()).unwrap(), gt);
        assert!(GroundTruth::parse("1 2 3").is_err());
        assert!(matches!(
            GroundTruth::parse("1 2\n1 3"),
            Err(Error::DuplicateImage(1))
        ));
    }
}
