use std::fmt;
use std::str::FromStr;

use super::{beam_search, AsrScorer, EnsembleSpec, Hypothesis, MtScorer, NBestList, StepScorer};
use crate::audio::FeatureMatrix;
use crate::error::{Error, Result};
use crate::model::{InputSpec, Model};

/// How the two log-likelihoods of a (source, translation) pair are combined.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Combination {
    /// `log P(y|z) + log P(z|x)`.
    #[default]
    Raw,
    /// The same sum over length-normalized scores, each side using its own alpha.
    Normalized,
}

/// Index of the best cell of a candidate matrix, `asr[i] + mt[i][j]`.
/// Ties go to the earlier source, then the earlier translation.
pub fn select_pair(asr: &[f64], mt: &[Vec<f64>]) -> Option<(usize, usize, f64)> {
    let mut best: Option<(usize, usize, f64)> = None;
    for (i, (a, row)) in asr.iter().zip(mt).enumerate() {
        for (j, m) in row.iter().enumerate() {
            let s = a + m;
            if best.map_or(true, |(_, _, b)| s > b) {
                best = Some((i, j, s));
            }
        }
    }
    best
}

#[derive(Clone, Debug)]
pub struct CoupledResult {
    pub sources: NBestList,
    /// One n-best list of translations per source hypothesis.
    pub translations: Vec<NBestList>,
    /// Combined score of every (source, translation) pair.
    pub scores: Vec<Vec<f64>>,
    pub best: (usize, usize),
}

impl CoupledResult {
    pub fn source(&self) -> &Hypothesis {
        &self.sources.hypotheses[self.best.0]
    }

    pub fn translation(&self) -> &Hypothesis {
        &self.translations[self.best.0].hypotheses[self.best.1]
    }

    pub fn combined_score(&self) -> f64 {
        self.scores[self.best.0][self.best.1]
    }

    /// Score of the plain pipeline choice: 1-best source, its 1-best translation.
    pub fn pipeline_score(&self) -> f64 {
        self.scores[0][0]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecodeOptions {
    pub asr_beam: usize,
    pub mt_beam: usize,
    pub asr_max_len: usize,
    pub mt_max_len: usize,
    pub asr_alpha: f64,
    pub mt_alpha: f64,
    pub combination: Combination,
}

impl Default for DecodeOptions {
    fn default() -> Self {
        DecodeOptions {
            asr_beam: 10,
            mt_beam: 5,
            asr_max_len: 64,
            mt_max_len: 64,
            asr_alpha: 1.0,
            mt_alpha: 1.0,
            combination: Combination::Raw,
        }
    }
}

/// Approximate `argmax_y P(y|x)` by the best pair over n-best sources `z`
/// and their n-best translations `y` of `log P(y|z) + log P(z|x)`.
///
/// `translate` receives each source hypothesis and returns its n-best
/// translations.
pub fn coupled_decode(
    asr_side: &mut dyn StepScorer,
    options: &DecodeOptions,
    mut translate: impl FnMut(&Hypothesis) -> Result<NBestList>,
) -> Result<CoupledResult> {
    let sources = beam_search(asr_side, options.asr_beam, options.asr_max_len, options.asr_alpha)?;
    let mut translations = Vec::with_capacity(sources.len());
    for z in &sources.hypotheses {
        let ys = translate(z)?;
        if ys.is_empty() {
            return Err(Error::Empty("translation n-best list".into()));
        }
        translations.push(ys);
    }
    let side = |h: &Hypothesis, alpha: f64| match options.combination {
        Combination::Raw => h.log_likelihood,
        Combination::Normalized => h.score(alpha),
    };
    let asr: Vec<f64> = sources.hypotheses.iter().map(|z| side(z, options.asr_alpha)).collect();
    let mt: Vec<Vec<f64>> =
        translations.iter().map(|ys| ys.hypotheses.iter().map(|y| side(y, options.mt_alpha)).collect()).collect();
    let (i, j, _) = select_pair(&asr, &mt).ok_or_else(|| Error::Empty("candidate matrix".into()))?;
    let scores = asr.iter().zip(&mt).map(|(a, row)| row.iter().map(|m| a + m).collect()).collect();
    Ok(CoupledResult { sources, translations, scores, best: (i, j) })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AsrSide {
    Ext,
    Joint,
    ExtJoint,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MtSide {
    Ext,
    Joint,
    JointExt,
}

/// One row of the ensemble tables: which ASR and MT models take part.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Recipe {
    pub asr: AsrSide,
    pub mt: MtSide,
}

impl Recipe {
    pub const ALL: [Recipe; 9] = {
        use AsrSide as A;
        use MtSide as M;
        [
            Recipe { asr: A::Ext, mt: M::Ext },
            Recipe { asr: A::Ext, mt: M::Joint },
            Recipe { asr: A::Ext, mt: M::JointExt },
            Recipe { asr: A::Joint, mt: M::Ext },
            Recipe { asr: A::Joint, mt: M::Joint },
            Recipe { asr: A::Joint, mt: M::JointExt },
            Recipe { asr: A::ExtJoint, mt: M::Ext },
            Recipe { asr: A::ExtJoint, mt: M::Joint },
            Recipe { asr: A::ExtJoint, mt: M::JointExt },
        ]
    };

    /// Short form used on the command line and in file names, e.g. `ext+joint.joint`.
    pub fn slug(&self) -> String {
        let a = match self.asr {
            AsrSide::Ext => "ext",
            AsrSide::Joint => "joint",
            AsrSide::ExtJoint => "ext+joint",
        };
        let m = match self.mt {
            MtSide::Ext => "ext",
            MtSide::Joint => "joint",
            MtSide::JointExt => "joint+ext",
        };
        format!("{a}.{m}")
    }

    pub fn needs_ext_asr(&self) -> bool {
        self.asr != AsrSide::Joint
    }

    pub fn needs_ext_mt(&self) -> bool {
        self.mt != MtSide::Joint
    }

    /// The joint model also supplies bridge states, so Joint-MT needs it
    /// even when the sources come from Ext-ASR alone.
    pub fn needs_joint(&self) -> bool {
        self.asr != AsrSide::Ext || self.mt != MtSide::Ext
    }
}

impl fmt::Display for Recipe {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let a = match self.asr {
            AsrSide::Ext => "Ext-ASR",
            AsrSide::Joint => "Joint-ASR",
            AsrSide::ExtJoint => "Ext-ASR + Joint-ASR",
        };
        let m = match self.mt {
            MtSide::Ext => "Ext-MT",
            MtSide::Joint => "Joint-MT",
            MtSide::JointExt => "Joint-MT + Ext-MT",
        };
        write!(f, "[{a}]⟹[{m}]")
    }
}

impl FromStr for Recipe {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        Recipe::ALL
            .into_iter()
            .find(|r| r.slug() == t || r.to_string() == t || r.to_string().replace('⟹', "=>") == t)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown recipe {s:?}")))
    }
}

/// The trained models a recipe can draw on.
#[derive(Clone, Copy, Debug, Default)]
pub struct Systems<'m> {
    pub ext_asr: Option<&'m Model>,
    pub ext_mt: Option<&'m Model>,
    pub joint: Option<&'m Model>,
}

impl<'m> Systems<'m> {
    /// Fails unless every model the recipe needs is present and compatible.
    pub fn check(&self, recipe: Recipe) -> Result<()> {
        let mut missing = Vec::new();
        if recipe.needs_ext_asr() && self.ext_asr.and_then(Model::asr).is_none() {
            missing.push("ext-asr".to_string());
        }
        if recipe.needs_ext_mt() && self.ext_mt.and_then(Model::mt).is_none() {
            missing.push("ext-mt".to_string());
        }
        if recipe.needs_joint() && self.joint.and_then(Model::joint).is_none() {
            missing.push("joint".to_string());
        }
        if !missing.is_empty() {
            return Err(Error::MissingModels(missing));
        }
        let source_vocab = match recipe.asr {
            AsrSide::Ext | AsrSide::ExtJoint => self.ext_asr.and_then(Model::asr).map(|a| a.config.target_vocab),
            AsrSide::Joint => self.joint.and_then(Model::joint).map(|j| j.asr.config.target_vocab),
        };
        if let (Some(v), Some(joint)) = (source_vocab, self.joint.and_then(Model::joint)) {
            if recipe.needs_joint() && joint.asr.config.target_vocab != v {
                return Err(Error::VocabMismatch("Ext-ASR and Joint-ASR transcripts differ".into()));
            }
        }
        if recipe.needs_ext_mt() {
            if let (Some(v), Some(mt)) = (source_vocab, self.ext_mt.and_then(Model::mt)) {
                match mt.config.input {
                    InputSpec::Tokens { vocab, .. } if vocab == v => {}
                    _ => return Err(Error::VocabMismatch("Ext-MT source vocabulary differs from the transcripts".into())),
                }
                if let Some(joint) = self.joint.and_then(Model::joint).filter(|_| recipe.mt == MtSide::JointExt) {
                    if joint.mt.config.target_vocab != mt.config.target_vocab {
                        return Err(Error::VocabMismatch("Joint-MT and Ext-MT targets differ".into()));
                    }
                }
            }
        }
        Ok(())
    }

    /// Runs one recipe on one utterance.
    pub fn decode(&self, recipe: Recipe, features: &FeatureMatrix, options: &DecodeOptions) -> Result<CoupledResult> {
        self.check(recipe)?;
        let ext_asr = self.ext_asr.and_then(|m| m.asr().map(|a| (a, &m.params)));
        let ext_mt = self.ext_mt.and_then(|m| m.mt().map(|a| (a, &m.params)));
        let joint = self.joint.and_then(|m| m.joint().map(|j| (j, &m.params)));

        let mut asr_members: Vec<Box<dyn StepScorer>> = Vec::new();
        if let (true, Some((a, p))) = (recipe.needs_ext_asr(), ext_asr) {
            asr_members.push(Box::new(AsrScorer::new(a, p, features)?));
        }
        if let (true, Some((j, p))) = (recipe.asr != AsrSide::Ext, joint) {
            asr_members.push(Box::new(AsrScorer::new(&j.asr, p, features)?));
        }
        let mut asr_side = EnsembleSpec::new(asr_members)?;

        let bridge_memory = match joint {
            Some((j, p)) if recipe.mt != MtSide::Ext => Some(j.asr.memory(p, features)?),
            _ => None,
        };
        coupled_decode(&mut asr_side, options, |z| {
            let mut members: Vec<Box<dyn StepScorer>> = Vec::new();
            if let (Some((j, p)), Some(mem)) = (joint, bridge_memory.as_ref()) {
                let (states, _) = j.asr.forced_states(p, mem, z.body())?;
                members.push(Box::new(MtScorer::from_states(&j.mt, p, &states)?));
            }
            if let (true, Some((m, p))) = (recipe.needs_ext_mt(), ext_mt) {
                members.push(Box::new(MtScorer::from_tokens(m, p, z.body())?));
            }
            let mut mt_side = EnsembleSpec::new(members)?;
            beam_search(&mut mt_side, options.mt_beam, options.mt_max_len, options.mt_alpha)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two_example() {
        let asr = [-1.0, -2.0];
        let mt = vec![vec![-3.0, -1.0], vec![-0.2, -5.0]];
        // sums: -4, -2, -2.2, -7
        let (i, j, s) = select_pair(&asr, &mt).unwrap();
        assert_eq!((i, j), (0, 1));
        assert!((s + 2.0).abs() < 1e-12);
        let without_best = vec![vec![-3.0, f64::NEG_INFINITY], mt[1].clone()];
        let (i, j, s) = select_pair(&asr, &without_best).unwrap();
        assert_eq!((i, j), (1, 0));
        assert!((s + 2.2).abs() < 1e-12);
    }

    #[test]
    fn recipes_round_trip_through_names() {
        let mut seen = std::collections::HashSet::new();
        for r in Recipe::ALL {
            assert_eq!(r.slug().parse::<Recipe>().unwrap(), r);
            assert_eq!(r.to_string().parse::<Recipe>().unwrap(), r);
            assert!(seen.insert(r.to_string()));
        }
        assert_eq!(
            Recipe { asr: AsrSide::Ext, mt: MtSide::JointExt }.to_string(),
            "[Ext-ASR]⟹[Joint-MT + Ext-MT]"
        );
        assert!("[Ext-ASR]=>[Ext-MT]".parse::<Recipe>().is_ok());
        assert!("nope".parse::<Recipe>().is_err());
    }

    #[test]
    fn missing_models_are_reported_up_front() {
        let s = Systems::default();
        match s.check(Recipe { asr: AsrSide::ExtJoint, mt: MtSide::Ext }) {
            Err(Error::MissingModels(ids)) => assert_eq!(ids, ["ext-asr", "ext-mt", "joint"]),
            r => panic!("{r:?}"),
        }
    }
}
