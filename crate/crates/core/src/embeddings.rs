//! Word-embedding table: random or pretrained-file initialization and
//! tape lookups. Row 0 is the padding row; it stays exactly zero
//! because lookups of the padding id bypass the table entirely.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::Rng;

use crate::corpus::{Vocabulary, PAD_ID};
use crate::error::{Error, Result};
use crate::tape::{NodeId, ParamRef, ParamSet, Tape};
use crate::tensor::Tensor;

/// Init bound for rows without pretrained vectors; small enough not to
/// dominate pretrained scale.
pub const INIT_BOUND: f64 = 0.05;

#[derive(Debug, Clone, Copy)]
pub struct EmbeddingTable {
    pub param: ParamRef,
    pub vocab_size: usize,
    pub dim: usize,
    /// When false the trainer skips updates for this table.
    pub trainable: bool,
}

impl EmbeddingTable {
    /// Uniform random rows in `±INIT_BOUND`; padding row zero.
    pub fn init_random(
        params: &mut ParamSet,
        vocab_size: usize,
        dim: usize,
        rng: &mut impl Rng,
    ) -> EmbeddingTable {
        let mut t = Tensor::uniform(&[vocab_size, dim], INIT_BOUND, rng);
        t.row_mut(PAD_ID as usize).fill(0.0);
        EmbeddingTable {
            param: params.add("embedding", t),
            vocab_size,
            dim,
            trainable: true,
        }
    }

    /// Initialize from a text file of `word v1 ... vd` lines. In-vocab
    /// words found in the file get the file vector; misses stay random.
    pub fn init_pretrained(
        params: &mut ParamSet,
        path: &Path,
        vocab: &Vocabulary,
        dim: usize,
        rng: &mut impl Rng,
    ) -> Result<EmbeddingTable> {
        let mut t = Tensor::uniform(&[vocab.size(), dim], INIT_BOUND, rng);
        t.row_mut(PAD_ID as usize).fill(0.0);

        let file = File::open(path)?;
        let mut covered = 0usize;
        for (lineno, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            let mut fields = line.split_whitespace();
            let Some(word) = fields.next() else { continue };
            let values: Vec<f64> = fields
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| {
                    Error::Data(format!(
                        "{}:{}: bad vector component: {e}",
                        path.display(),
                        lineno + 1
                    ))
                })?;
            if values.len() != dim {
                return Err(Error::Data(format!(
                    "{}:{}: vector has {} dimensions, expected {dim}",
                    path.display(),
                    lineno + 1,
                    values.len()
                )));
            }
            if vocab.contains(word) {
                t.row_mut(vocab.id(word) as usize).copy_from_slice(&values);
                covered += 1;
            }
        }

        let retained = vocab.size().saturating_sub(2);
        if retained > 0 {
            log::info!(
                "pretrained vectors cover {covered}/{retained} words ({:.1}%)",
                100.0 * covered as f64 / retained as f64
            );
        }
        Ok(EmbeddingTable {
            param: params.add("embedding", t),
            vocab_size: vocab.size(),
            dim,
            trainable: true,
        })
    }

    /// One node per token. The padding id yields a constant zero row,
    /// so no gradient ever reaches table row 0.
    pub fn lookup(&self, tape: &mut Tape, token_ids: &[u32]) -> Result<Vec<NodeId>> {
        if token_ids.is_empty() {
            return Err(Error::EmptySequence);
        }
        token_ids
            .iter()
            .map(|&id| {
                if id as usize >= self.vocab_size {
                    return Err(Error::Shape(format!(
                        "token id {id} out of range for vocabulary of {}",
                        self.vocab_size
                    )));
                }
                Ok(if id == PAD_ID {
                    tape.input(Tensor::zeros(&[self.dim]))
                } else {
                    tape.table_row(self.param, id as usize)
                })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::build_vocab;
    use crate::tape::{finite_diff_gradient, GradientStore};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn vocab_from(words: &[&str]) -> Vocabulary {
        let report: Vec<String> = words.iter().map(|s| s.to_string()).collect();
        build_vocab(std::iter::once(report.as_slice()), 1).unwrap()
    }

    #[test]
    fn random_init_padding_zero_and_bounded() {
        let mut params = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let table = EmbeddingTable::init_random(&mut params, 10, 4, &mut rng);
        let t = params.get(table.param);
        assert!(t.row(0).iter().all(|&v| v == 0.0));
        assert!(t.data().iter().all(|v| v.abs() <= INIT_BOUND));
        assert!(t.row(1).iter().any(|&v| v != 0.0));
    }

    #[test]
    fn pretrained_exact_values_and_random_misses() {
        let vocab = vocab_from(&["camera", "crash", "oddword"]);
        let f = tempfile::NamedTempFile::new().unwrap();
        std::fs::write(f.path(), "camera 1.0 2.0 3.0\ncrash -0.5 0.25 0.125\nextra 9 9 9\n")
            .unwrap();

        let mut params = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let table =
            EmbeddingTable::init_pretrained(&mut params, f.path(), &vocab, 3, &mut rng).unwrap();
        let t = params.get(table.param);
        assert_eq!(t.row(vocab.id("camera") as usize), &[1.0, 2.0, 3.0]);
        assert_eq!(t.row(vocab.id("crash") as usize), &[-0.5, 0.25, 0.125]);
        let miss = t.row(vocab.id("oddword") as usize);
        assert!(miss.iter().all(|v| v.abs() <= INIT_BOUND));
        assert!(miss.iter().any(|&v| v != 0.0));

        // deterministic by seed
        let mut params2 = ParamSet::new();
        let mut rng2 = ChaCha8Rng::seed_from_u64(3);
        let table2 =
            EmbeddingTable::init_pretrained(&mut params2, f.path(), &vocab, 3, &mut rng2).unwrap();
        assert_eq!(params.get(table.param), params2.get(table2.param));
    }

    #[test]
    fn pretrained_dimension_mismatch_names_line() {
        let vocab = vocab_from(&["camera"]);
        let f = tempfile::NamedTempFile::new().unwrap();
        std::fs::write(f.path(), "camera 1.0 2.0 3.0\nbroken 1.0 2.0\n").unwrap();
        let mut params = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let err = EmbeddingTable::init_pretrained(&mut params, f.path(), &vocab, 3, &mut rng)
            .unwrap_err();
        assert!(err.to_string().contains(":2:"), "got: {err}");
    }

    #[test]
    fn pretrained_config_dim_mismatch_errors() {
        let vocab = vocab_from(&["camera"]);
        let f = tempfile::NamedTempFile::new().unwrap();
        std::fs::write(f.path(), "camera 1.0 2.0\n").unwrap();
        let mut params = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!(
            EmbeddingTable::init_pretrained(&mut params, f.path(), &vocab, 3, &mut rng).is_err()
        );
    }

    #[test]
    fn lookup_shapes_and_padding() {
        let mut params = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let table = EmbeddingTable::init_random(&mut params, 8, 4, &mut rng);
        let mut tape = Tape::new(&params);
        let rows = table.lookup(&mut tape, &[PAD_ID, 3, 3]).unwrap();
        assert_eq!(rows.len(), 3);
        assert!(tape.value(rows[0]).data().iter().all(|&v| v == 0.0));
        assert_eq!(tape.value(rows[1]), tape.value(rows[2]));
    }

    #[test]
    fn lookup_out_of_range_errors() {
        let mut params = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let table = EmbeddingTable::init_random(&mut params, 8, 4, &mut rng);
        let mut tape = Tape::new(&params);
        assert!(table.lookup(&mut tape, &[8]).is_err());
        assert!(table.lookup(&mut tape, &[]).is_err());
    }

    #[test]
    fn untouched_and_padding_rows_get_zero_gradient() {
        let mut params = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let table = EmbeddingTable::init_random(&mut params, 6, 3, &mut rng);

        let mut tape = Tape::new(&params);
        let mut store = GradientStore::new(&params);
        let rows = table.lookup(&mut tape, &[PAD_ID, 2, 4, 2]).unwrap();
        let s = tape.sum_rows(&rows);
        let sq = tape.mul(s, s);
        let ones = tape.input(Tensor::vector(vec![1.0; 3]));
        let l = tape.dot(sq, ones);
        tape.backward(l, &mut store);
        let g = store.get(table.param);
        assert!(g.row(0).iter().all(|&v| v == 0.0), "padding row gets gradient");
        assert!(g.row(1).iter().all(|&v| v == 0.0), "untouched row gets gradient");
        assert!(g.row(2).iter().any(|&v| v != 0.0));

        // repeated id accumulates like finite differences say it should
        let mut loss_fn = |ps: &ParamSet| {
            let mut tape = Tape::new(ps);
            let rows = table.lookup(&mut tape, &[PAD_ID, 2, 4, 2])?;
            let s = tape.sum_rows(&rows);
            let sq = tape.mul(s, s);
            let ones = tape.input(Tensor::vector(vec![1.0; 3]));
            let l = tape.dot(sq, ones);
            Ok(tape.value(l).item())
        };
        let oracle = finite_diff_gradient(&mut loss_fn, &mut params, 1e-5).unwrap();
        let og = oracle.get(table.param);
        for (a, b) in g.data().iter().zip(og.data()) {
            assert!((a - b).abs() <= 1e-6 + 1e-3 * b.abs(), "{a} vs {b}");
        }
    }
}
