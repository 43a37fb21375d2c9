//! Prompt selection by text-image score over the tags and the query.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::imaging::{composite, BackgroundFill, Image};
use crate::mask::BinaryMask;
use crate::par::parallel_map;
use crate::providers::{TagSet, TextImageScorer};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CandidateScore {
    pub candidate: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PromptSelection {
    /// The winning descriptor, before templating.
    pub prompt: String,
    /// Tags in tagger order, then the query.
    pub scores: Vec<CandidateScore>,
    #[serde(skip)]
    pub swapped_target: Image,
}

/// Index of the first maximal score.
pub fn argmax_first(scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, s) in scores.iter().enumerate() {
        if best.is_none_or(|b| *s > scores[b]) {
            best = Some(i);
        }
    }
    best
}

/// Candidate list: tags, then the query unless it already appears as a tag.
pub fn candidates(tags: &TagSet, query: &str) -> Vec<String> {
    let mut c: Vec<String> = tags.iter().cloned().collect();
    let q = query.trim().to_string();
    if !c.iter().any(|t| *t == q) {
        c.push(q);
    }
    c
}

pub fn select_prompt(
    img: &Image,
    visible: &BinaryMask,
    tags: &TagSet,
    query: &str,
    scorer: &dyn TextImageScorer,
    bkgd: &BackgroundFill,
    parallelism: usize,
) -> Result<PromptSelection> {
    if visible.is_empty() {
        return Err(Error::InvalidArgument("visible mask must be non-empty".into()));
    }
    if query.trim().is_empty() {
        return Err(Error::InvalidArgument("query must be non-empty".into()));
    }
    let swapped_target = composite(img, visible, bkgd)?;
    let cands = candidates(tags, query);
    let results = parallel_map(&cands, parallelism, |_, c| scorer.score_text_image(&swapped_target, c));
    let mut scores = Vec::with_capacity(cands.len());
    for (candidate, r) in cands.into_iter().zip(results) {
        scores.push(CandidateScore { candidate, score: r?.value() });
    }
    let values: Vec<f64> = scores.iter().map(|s| s.score).collect();
    let best = argmax_first(&values).expect("at least the query is a candidate");
    Ok(PromptSelection { prompt: scores[best].candidate.clone(), scores, swapped_target })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::providers::{ProviderResult, Score};

    struct Table(Vec<(&'static str, f64)>);

    impl TextImageScorer for Table {
        fn score_text_image(&self, _: &Image, text: &str) -> ProviderResult<Score> {
            Score::new(self.0.iter().find(|(t, _)| *t == text).map_or(0.0, |(_, s)| *s))
        }
    }

    fn setup() -> (Image, BinaryMask) {
        let img = Image::from_fn(8, 8, |x, y| [x as u8 * 10, y as u8 * 10, 99]);
        let vis = BinaryMask::from_fn(8, 8, |x, y| (2..6).contains(&x) && (2..6).contains(&y));
        (img, vis)
    }

    #[test]
    fn empty_tags_select_the_query() {
        let (img, vis) = setup();
        let s = select_prompt(&img, &vis, &TagSet::default(), "the thing", &Table(vec![]), &BackgroundFill::default(), 2)
            .unwrap();
        assert_eq!(s.prompt, "the thing");
        assert_eq!(s.scores.len(), 1);
    }

    #[test]
    fn ties_go_to_the_earliest_candidate() {
        let (img, vis) = setup();
        let scorer = Table(vec![("cup", 0.7), ("mug", 0.7), ("q", 0.7)]);
        let s = select_prompt(&img, &vis, &TagSet::new(["cup", "mug"]), "q", &scorer, &BackgroundFill::default(), 3)
            .unwrap();
        assert_eq!(s.prompt, "cup");
        let names: Vec<&str> = s.scores.iter().map(|c| c.candidate.as_str()).collect();
        assert_eq!(names, ["cup", "mug", "q"]);
    }

    #[test]
    fn swapped_target_keeps_only_visible_pixels() {
        let (img, vis) = setup();
        let fill = BackgroundFill::Solid([1, 2, 3]);
        let s = select_prompt(&img, &vis, &TagSet::new(["a"]), "b", &Table(vec![("b", 1.0)]), &fill, 1).unwrap();
        assert_eq!(s.prompt, "b");
        for y in 0..8 {
            for x in 0..8 {
                let expect = if vis.get(x, y) { img.get(x, y) } else { [1, 2, 3] };
                assert_eq!(s.swapped_target.get(x, y), expect);
            }
        }
    }

    #[test]
    fn argmax_prefers_first() {
        assert_eq!(argmax_first(&[]), None);
        assert_eq!(argmax_first(&[0.1, 0.5, 0.5, 0.2]), Some(1));
        assert_eq!(argmax_first(&[-3.0]), Some(0));
    }
}
