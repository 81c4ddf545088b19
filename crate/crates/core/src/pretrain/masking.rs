use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{EntitySpecial, WordSpecial};
use crate::model::EncoderInput;

use super::PretrainError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaskingConfig {
    pub word_prob: f64,
    pub entity_prob: f64,
    /// Apply the 80% [MASK_WORD] / 10% random / 10% unchanged split to
    /// selected words; `false` always uses [MASK_WORD].
    pub word_split: bool,
}

impl Default for MaskingConfig {
    fn default() -> Self {
        Self { word_prob: 0.15, entity_prob: 0.15, word_split: true }
    }
}

impl MaskingConfig {
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (name, p) in [("word_prob", self.word_prob), ("entity_prob", self.entity_prob)] {
            if !(0.0..=1.0).contains(&p) {
                out.push(format!("masking.{name} ({p}) must be in [0, 1]"));
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WordAction {
    Mask,
    Random(usize),
    Keep,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaskedWord {
    pub position: usize,
    pub action: WordAction,
    pub gold: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaskedEntity {
    pub index: usize,
    pub gold: usize,
}

/// Which tokens of one sequence are hidden and what they should predict.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MaskingPlan {
    pub words: Vec<MaskedWord>,
    pub entities: Vec<MaskedEntity>,
}

fn is_special_word(id: usize) -> bool {
    id < WordSpecial::ALL.len()
}

/// Draws an independent Bernoulli(p) per regular word and per entity.
/// Special words ([CLS], [SEP], [PAD], ...) and padded tokens are never
/// selected. Selected entities always become [MASK].
pub fn make_masking_plan<R: Rng>(
    input: &EncoderInput,
    rng: &mut R,
    cfg: &MaskingConfig,
    word_vocab_size: usize,
) -> MaskingPlan {
    let mut plan = MaskingPlan::default();
    let first_regular = WordSpecial::ALL.len();
    for (position, &id) in input.word_ids.iter().enumerate() {
        if is_special_word(id) || !input.word_keep[position] {
            continue;
        }
        if rng.random::<f64>() >= cfg.word_prob {
            continue;
        }
        let action = if !cfg.word_split {
            WordAction::Mask
        } else {
            let r: f64 = rng.random();
            if r < 0.8 {
                WordAction::Mask
            } else if r < 0.9 && word_vocab_size > first_regular {
                WordAction::Random(rng.random_range(first_regular..word_vocab_size))
            } else if r < 0.9 {
                WordAction::Mask
            } else {
                WordAction::Keep
            }
        };
        plan.words.push(MaskedWord { position, action, gold: id });
    }
    for (index, &id) in input.entity_ids.iter().enumerate() {
        if !input.entity_keep[index] {
            continue;
        }
        if rng.random::<f64>() < cfg.entity_prob {
            plan.entities.push(MaskedEntity { index, gold: id });
        }
    }
    plan
}

impl MaskingPlan {
    pub fn is_empty(&self) -> bool {
        self.words.is_empty() && self.entities.is_empty()
    }

    /// The corrupted model input.
    pub fn apply(&self, input: &EncoderInput) -> EncoderInput {
        let mut out = input.clone();
        for w in &self.words {
            match w.action {
                WordAction::Mask => out.word_ids[w.position] = WordSpecial::Mask.id(),
                WordAction::Random(r) => out.word_ids[w.position] = r,
                WordAction::Keep => {}
            }
        }
        for e in &self.entities {
            out.entity_ids[e.index] = EntitySpecial::Mask.id();
        }
        out
    }

    pub fn validate(&self, input: &EncoderInput, v_w: usize, v_e: usize) -> Result<(), PretrainError> {
        for w in &self.words {
            if w.position >= input.num_words() {
                return Err(PretrainError::Validation(format!("masked word position {} out of range", w.position)));
            }
            if w.gold >= v_w {
                return Err(PretrainError::Validation(format!("gold word id {} out of range for V_w = {v_w}", w.gold)));
            }
        }
        for e in &self.entities {
            if e.index >= input.num_entities() {
                return Err(PretrainError::Validation(format!("masked entity index {} out of range", e.index)));
            }
            if e.gold >= v_e {
                return Err(PretrainError::Validation(format!(
                    "gold entity id {} out of range for V_e = {v_e}",
                    e.gold
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn input() -> EncoderInput {
        EncoderInput::new(vec![2, 7, 8, 9, 3], (10..20).collect(), (0..10).map(|i| vec![1 + i % 3]).collect())
    }

    #[test]
    fn zero_probability_masks_nothing() {
        let cfg = MaskingConfig { word_prob: 0.0, entity_prob: 0.0, word_split: true };
        let plan = make_masking_plan(&input(), &mut ChaCha8Rng::seed_from_u64(0), &cfg, 50);
        assert!(plan.is_empty());
    }

    #[test]
    fn saturation_masks_every_entity_and_regular_word() {
        let cfg = MaskingConfig { word_prob: 1.0, entity_prob: 1.0, word_split: false };
        let inp = input();
        let plan = make_masking_plan(&inp, &mut ChaCha8Rng::seed_from_u64(0), &cfg, 50);
        assert_eq!(plan.entities.len(), 10);
        assert!(plan.entities.iter().all(|e| e.gold == inp.entity_ids[e.index]));
        assert_eq!(plan.words.iter().map(|w| w.position).collect::<Vec<_>>(), [1, 2, 3]);
        let masked = plan.apply(&inp);
        assert_eq!(masked.word_ids, [2, 4, 4, 4, 3]);
        assert!(masked.entity_ids.iter().all(|&e| e == EntitySpecial::Mask.id()));
    }

    #[test]
    fn unk_entities_remain_eligible() {
        let cfg = MaskingConfig { word_prob: 0.0, entity_prob: 1.0, word_split: true };
        let inp = EncoderInput::new(vec![2, 7, 3], vec![EntitySpecial::Unk.id()], vec![vec![1]]);
        let plan = make_masking_plan(&inp, &mut ChaCha8Rng::seed_from_u64(0), &cfg, 50);
        assert_eq!(plan.entities, [MaskedEntity { index: 0, gold: 0 }]);
    }
}
