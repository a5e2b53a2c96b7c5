//! Random block code for the communication phase and its ML decoder.

use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dmc::{Channel, ChannelConstants};

use super::{YiConfig, YiError};

/// Scores closer than this tie; the smallest message index wins.
pub const ML_TIE_TOLERANCE: f64 = 1e-9;

/// `m` codewords of length `n1`, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockCode {
    m: usize,
    n1: usize,
    symbols: Vec<usize>,
}

impl BlockCode {
    pub fn from_codewords(codewords: &[Vec<usize>]) -> Result<Self, YiError> {
        let n1 = codewords.first().map_or(0, Vec::len);
        if codewords.len() < 2 || n1 == 0 || codewords.iter().any(|c| c.len() != n1) {
            return Err(YiError::InvalidConfig(
                "a code needs at least two codewords of one common nonzero length".into(),
            ));
        }
        Ok(BlockCode {
            m: codewords.len(),
            n1,
            symbols: codewords.concat(),
        })
    }

    pub fn size(&self) -> usize {
        self.m
    }

    pub fn length(&self) -> usize {
        self.n1
    }

    pub fn codeword(&self, message: usize) -> &[usize] {
        &self.symbols[message * self.n1..(message + 1) * self.n1]
    }

    pub fn symbols(&self) -> &[usize] {
        &self.symbols
    }

    /// Number of codewords equal to an earlier one.
    pub fn duplicates(&self) -> usize {
        let mut seen = std::collections::HashSet::with_capacity(self.m);
        (0..self.m)
            .filter(|&w| !seen.insert(self.codeword(w)))
            .count()
    }
}

/// i.i.d. codeword symbols from the capacity-achieving input distribution,
/// deterministic in `cfg.code_seed`.
pub fn build_code(cfg: &YiConfig, consts: &ChannelConstants) -> Result<BlockCode, YiError> {
    cfg.validate()?;
    let dist = WeightedIndex::new(&consts.optimal_input_dist)
        .map_err(|e| YiError::InvalidConfig(format!("input distribution: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.code_seed);
    let symbols = (0..cfg.m * cfg.n1).map(|_| dist.sample(&mut rng)).collect();
    Ok(BlockCode {
        m: cfg.m,
        n1: cfg.n1,
        symbols,
    })
}

/// Channel outputs of one communication phase; binary outputs are also
/// kept packed for the popcount decoder.
#[derive(Debug, Clone, Default)]
pub struct Observation {
    symbols: Vec<usize>,
    bits: Vec<u64>,
}

impl Observation {
    pub fn clear(&mut self) {
        self.symbols.clear();
        self.bits.clear();
    }

    pub fn push(&mut self, y: usize) {
        let i = self.symbols.len();
        if i.is_multiple_of(64) {
            self.bits.push(0);
        }
        if y == 1 {
            *self.bits.last_mut().expect("word pushed") |= 1 << (i % 64);
        }
        self.symbols.push(y);
    }

    pub fn symbols(&self) -> &[usize] {
        &self.symbols
    }
}

#[derive(Debug, Clone)]
enum Scorer {
    /// Two inputs, two outputs, all transitions positive. The log-likelihood
    /// of codeword c is `key[c] + slope * |c AND y|` up to a term common to
    /// all codewords.
    Packed {
        words: Vec<u64>,
        per_word: usize,
        key: Vec<f64>,
        slope: f64,
    },
    Generic {
        log_p: Vec<f64>,
        outputs: usize,
    },
}

/// Exhaustive maximum-likelihood decoder over a block code.
#[derive(Debug, Clone)]
pub struct MlDecoder {
    code: BlockCode,
    scorer: Scorer,
}

impl MlDecoder {
    pub fn new(code: BlockCode, ch: &Channel) -> Self {
        let binary = ch.input_size() == 2 && ch.output_size() == 2 && ch.min_transition() > 0.0;
        let scorer = if binary {
            let l = |x: usize, y: usize| ch.prob(x, y).ln();
            let per_word = code.n1.div_ceil(64);
            let mut words = vec![0u64; code.m * per_word];
            let mut key = Vec::with_capacity(code.m);
            for w in 0..code.m {
                let mut ones = 0u32;
                for (i, &x) in code.codeword(w).iter().enumerate() {
                    if x == 1 {
                        words[w * per_word + i / 64] |= 1 << (i % 64);
                        ones += 1;
                    }
                }
                key.push(f64::from(ones) * (l(1, 0) - l(0, 0)));
            }
            Scorer::Packed {
                words,
                per_word,
                key,
                slope: l(1, 1) - l(1, 0) - l(0, 1) + l(0, 0),
            }
        } else {
            let log_p = (0..ch.input_size())
                .flat_map(|x| ch.row(x).iter().map(|p| p.ln()).collect::<Vec<_>>())
                .collect();
            Scorer::Generic {
                log_p,
                outputs: ch.output_size(),
            }
        };
        MlDecoder { code, scorer }
    }

    pub fn code(&self) -> &BlockCode {
        &self.code
    }

    pub fn uses_packed_scores(&self) -> bool {
        matches!(self.scorer, Scorer::Packed { .. })
    }

    /// Fills `scores` with per-codeword log-likelihoods (up to a shared
    /// offset) and returns the ML message.
    pub fn decode(&self, obs: &Observation, scores: &mut Vec<f64>) -> usize {
        scores.clear();
        match &self.scorer {
            Scorer::Packed {
                words,
                per_word,
                key,
                slope,
            } => {
                for (w, c) in words.chunks_exact(*per_word).enumerate() {
                    let agree: u32 = c
                        .iter()
                        .zip(&obs.bits)
                        .map(|(a, b)| (a & b).count_ones())
                        .sum();
                    scores.push(key[w] + slope * f64::from(agree));
                }
            }
            Scorer::Generic { log_p, outputs } => {
                for w in 0..self.code.m {
                    let s = self
                        .code
                        .codeword(w)
                        .iter()
                        .zip(&obs.symbols)
                        .map(|(&x, &y)| log_p[x * outputs + y])
                        .sum();
                    scores.push(s);
                }
            }
        }
        pick_ml(scores)
    }
}

/// Smallest index whose score is within the tie tolerance of the maximum.
fn pick_ml(scores: &[f64]) -> usize {
    let best = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    scores
        .iter()
        .position(|&s| s >= best - ML_TIE_TOLERANCE)
        .unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dmc::channel_constants;
    use rand::Rng;

    fn consts(ch: &Channel) -> ChannelConstants {
        channel_constants(ch, 1e-12).unwrap()
    }

    #[test]
    fn code_is_deterministic_in_seed() {
        let ch = Channel::bsc(0.1).unwrap();
        let k = consts(&ch);
        let cfg = YiConfig::new(16, 32, 4).with_code_seed(7);
        assert_eq!(build_code(&cfg, &k).unwrap(), build_code(&cfg, &k).unwrap());
        assert_ne!(
            build_code(&cfg, &k).unwrap(),
            build_code(&cfg.clone().with_code_seed(8), &k).unwrap()
        );
    }

    #[test]
    fn bsc_code_symbols_are_balanced() {
        let ch = Channel::bsc(0.1).unwrap();
        let cfg = YiConfig::new(16, 32, 4).with_code_seed(7);
        let code = build_code(&cfg, &consts(&ch)).unwrap();
        let ones = code.symbols().iter().filter(|&&x| x == 1).count() as f64;
        let n = code.symbols().len() as f64;
        assert!((ones - n / 2.0).abs() <= 5.0 * (n / 4.0).sqrt());
    }

    #[test]
    fn skewed_input_distribution_is_followed() {
        let ch = Channel::new(&[vec![0.98, 0.02], vec![0.45, 0.55]]).unwrap();
        let k = consts(&ch);
        let cfg = YiConfig::new(1000, 20, 1).with_code_seed(3);
        let code = build_code(&cfg, &k).unwrap();
        let n = code.symbols().len() as f64;
        let ones = code.symbols().iter().filter(|&&x| x == 1).count() as f64;
        let p = k.optimal_input_dist[1];
        assert!((ones / n - p).abs() <= 5.0 * (p * (1.0 - p) / n).sqrt());
    }

    #[test]
    fn packed_and_generic_scores_agree() {
        let ch = Channel::new(&[vec![0.8, 0.2], vec![0.3, 0.7]]).unwrap();
        let cfg = YiConfig::new(64, 70, 1).with_code_seed(5);
        let code = build_code(&cfg, &consts(&ch)).unwrap();
        let packed = MlDecoder::new(code.clone(), &ch);
        assert!(packed.uses_packed_scores());
        let generic = MlDecoder {
            code: code.clone(),
            scorer: Scorer::Generic {
                log_p: (0..2)
                    .flat_map(|x| ch.row(x).iter().map(|p| p.ln()).collect::<Vec<_>>())
                    .collect(),
                outputs: 2,
            },
        };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (mut s1, mut s2) = (Vec::new(), Vec::new());
        for _ in 0..200 {
            let mut obs = Observation::default();
            for _ in 0..70 {
                obs.push(rng.gen_range(0..2));
            }
            let a = packed.decode(&obs, &mut s1);
            let b = generic.decode(&obs, &mut s2);
            assert_eq!(a, b);
            // scores differ by one offset shared by all codewords
            let off = s2[0] - s1[0];
            for (x, y) in s1.iter().zip(&s2) {
                assert!((y - x - off).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn ties_go_to_the_smallest_index() {
        let ch = Channel::bsc(0.2).unwrap();
        let code = BlockCode::from_codewords(&[vec![0, 1], vec![1, 0], vec![0, 1]]).unwrap();
        let dec = MlDecoder::new(code, &ch);
        let mut obs = Observation::default();
        obs.push(0);
        obs.push(0);
        // all three codewords are at distance 1 from 00
        assert_eq!(dec.decode(&obs, &mut Vec::new()), 0);
        obs.clear();
        obs.push(1);
        obs.push(0);
        assert_eq!(dec.decode(&obs, &mut Vec::new()), 1);
        assert_eq!(dec.code().duplicates(), 1);
    }

    #[test]
    fn generic_decoder_on_three_outputs() {
        let ch = Channel::bec(0.3).unwrap();
        let code =
            BlockCode::from_codewords(&[vec![0, 0, 1], vec![0, 1, 1], vec![1, 1, 1]]).unwrap();
        let dec = MlDecoder::new(code, &ch);
        assert!(!dec.uses_packed_scores());
        let mut obs = Observation::default();
        for y in [1, 2, 2] {
            obs.push(y);
        }
        // erased first symbol, then two ones: codewords 1 and 2 tie
        assert_eq!(dec.decode(&obs, &mut Vec::new()), 1);
    }
}
