use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use super::{Annotations, MetricsError, ObjectVocabulary};

/// Raw corpus-level CHAIR counts.
///
/// Mentions are distinct objects per caption. Captions without any object
/// mention add nothing to the mention counts and never count as
/// hallucinating.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChairCounts {
    pub captions: u64,
    pub hallucinated_captions: u64,
    pub mentions: u64,
    pub hallucinated_mentions: u64,
    pub correct_mentions: u64,
    pub ground_truth_objects: u64,
}

fn ratio(num: u64, den: u64) -> Ratio<u64> {
    if den == 0 {
        Ratio::from_integer(0)
    } else {
        Ratio::new(num, den)
    }
}

fn to_f64(r: Ratio<u64>) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

impl ChairCounts {
    /// Fraction of captions with at least one hallucinated object.
    pub fn chair_s(&self) -> Ratio<u64> {
        ratio(self.hallucinated_captions, self.captions)
    }

    /// Fraction of object mentions that are hallucinated.
    pub fn chair_i(&self) -> Ratio<u64> {
        ratio(self.hallucinated_mentions, self.mentions)
    }

    /// Fraction of ground-truth objects that are mentioned.
    pub fn recall(&self) -> Ratio<u64> {
        ratio(self.correct_mentions, self.ground_truth_objects)
    }

    pub fn chair_s_percent(&self) -> f64 {
        100.0 * to_f64(self.chair_s())
    }

    pub fn chair_i_percent(&self) -> f64 {
        100.0 * to_f64(self.chair_i())
    }

    pub fn recall_percent(&self) -> f64 {
        100.0 * to_f64(self.recall())
    }
}

/// CHAIR counts over `(image_id, caption)` pairs.
pub fn chair_metrics<'a, I>(captions: I, annotations: &Annotations, vocab: &ObjectVocabulary) -> Result<ChairCounts, MetricsError>
where
    I: IntoIterator<Item = (&'a str, &'a str)>,
{
    let mut c = ChairCounts::default();
    for (image, caption) in captions {
        let truth = annotations.get(image).ok_or_else(|| MetricsError::MissingAnnotation(image.to_string()))?;
        let mentions = vocab.extract(caption);
        let hallucinated = mentions.iter().filter(|m| !truth.contains(&m.object)).count() as u64;
        c.captions += 1;
        c.mentions += mentions.len() as u64;
        c.hallucinated_mentions += hallucinated;
        c.correct_mentions += mentions.len() as u64 - hallucinated;
        c.ground_truth_objects += truth.len() as u64;
        if hallucinated > 0 {
            c.hallucinated_captions += 1;
        }
    }
    if c.captions == 0 {
        return Err(MetricsError::EmptyCorpus);
    }
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn annotations(pairs: &[(&str, &[&str])]) -> Annotations {
        Annotations::new(
            pairs.iter().map(|(i, o)| (i.to_string(), o.iter().map(|s| s.to_string()).collect::<Vec<_>>())),
            ObjectVocabulary::builtin(),
        )
        .unwrap()
    }

    #[test]
    fn single_caption_hand_count() {
        let a = annotations(&[("1", &["dog", "frisbee", "person"])]);
        let c = chair_metrics([("1", "A dog catches a frisbee near a car.")], &a, ObjectVocabulary::builtin()).unwrap();
        assert_eq!(c.chair_i(), Ratio::new(1, 3));
        assert_eq!(c.chair_s(), Ratio::new(1, 1));
        assert_eq!(c.recall(), Ratio::new(2, 3));
    }

    #[test]
    fn caption_without_objects() {
        let a = annotations(&[("1", &["dog"])]);
        let c = chair_metrics([("1", "Nothing to see here.")], &a, ObjectVocabulary::builtin()).unwrap();
        assert_eq!((c.mentions, c.hallucinated_mentions, c.hallucinated_captions), (0, 0, 0));
        assert_eq!(c.chair_i(), Ratio::from_integer(0));
        assert_eq!(c.recall(), Ratio::new(0, 1));
    }

    #[test]
    fn errors() {
        let a = annotations(&[("1", &["dog"])]);
        let v = ObjectVocabulary::builtin();
        assert!(matches!(chair_metrics([("2", "a dog")], &a, v), Err(MetricsError::MissingAnnotation(_))));
        assert!(matches!(chair_metrics(std::iter::empty(), &a, v), Err(MetricsError::EmptyCorpus)));
    }

    #[test]
    fn monotonicity() {
        let a = annotations(&[("1", &["dog", "cat"])]);
        let v = ObjectVocabulary::builtin();
        let base = chair_metrics([("1", "a dog and a car")], &a, v).unwrap();
        let plus_correct = chair_metrics([("1", "a dog and a car and a cat")], &a, v).unwrap();
        let plus_wrong = chair_metrics([("1", "a dog and a car and a bus")], &a, v).unwrap();
        assert!(plus_correct.hallucinated_mentions <= base.hallucinated_mentions);
        assert!(plus_wrong.recall() <= base.recall());
    }
}
