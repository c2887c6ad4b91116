use crate::tensor::{BoundParams, Tape, Var};

use super::encoder::{block_vars, encoder_block};
use super::{ModelError, Result, ShuffleMode};

pub const N_PATHWAYS: usize = 4;

/// A slice taken from a source pathway: slice `index` of `count` equal
/// feature partitions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SourceSlice {
    pub pathway: usize,
    pub index: usize,
    pub count: usize,
}

/// The channel routing applied before the encoder blocks of shuffle layer
/// `layer`: `result[dest]` lists the slices concatenated (in order) to form
/// pathway `dest`'s input. The same table drives the forward pass and the
/// weight-free provenance trace.
pub fn routing(mode: ShuffleMode, layer: usize) -> [Vec<SourceSlice>; 4] {
    match mode {
        ShuffleMode::Full => std::array::from_fn(|dest| {
            (0..N_PATHWAYS)
                .map(|src| SourceSlice { pathway: src, index: dest, count: 4 })
                .collect()
        }),
        ShuffleMode::PairToPair => {
            // Round-robin pairing: {0,1},{2,3} then {0,2},{1,3} then
            // {0,3},{1,2}, repeating. Each member keeps its first half and
            // receives its partner's second half.
            const SCHEDULE: [[(usize, usize); 2]; 3] =
                [[(0, 1), (2, 3)], [(0, 2), (1, 3)], [(0, 3), (1, 2)]];
            let mut result: [Vec<SourceSlice>; 4] = Default::default();
            for &(a, b) in &SCHEDULE[layer % SCHEDULE.len()] {
                result[a] = vec![
                    SourceSlice { pathway: a, index: 0, count: 2 },
                    SourceSlice { pathway: b, index: 1, count: 2 },
                ];
                result[b] = vec![
                    SourceSlice { pathway: b, index: 0, count: 2 },
                    SourceSlice { pathway: a, index: 1, count: 2 },
                ];
            }
            result
        }
        ShuffleMode::NoShuffle => std::array::from_fn(|dest| {
            vec![SourceSlice { pathway: dest, index: 0, count: 1 }]
        }),
    }
}

/// Origin coverage per pathway after `n_layers` of routing: entry
/// `[p][k]` says whether pathway `p`'s features depend on stage-one
/// pathway `k`. Only the partition/concat plumbing is traced; the encoder
/// blocks mix features densely within a pathway, so origins union there.
pub fn provenance_after(mode: ShuffleMode, n_layers: usize) -> [[bool; 4]; 4] {
    let mut origins: [[bool; 4]; 4] = std::array::from_fn(|p| std::array::from_fn(|k| p == k));
    for layer in 0..n_layers {
        let table = routing(mode, layer);
        let mut next = [[false; 4]; 4];
        for (dest, sources) in table.iter().enumerate() {
            for slice in sources {
                for k in 0..4 {
                    next[dest][k] |= origins[slice.pathway][k];
                }
            }
        }
        origins = next;
    }
    origins
}

/// First layer count at which every pathway depends on all four origins,
/// or `None` if that never happens within `max_layers`.
pub fn provenance_closure_layer(mode: ShuffleMode, max_layers: usize) -> Option<usize> {
    (1..=max_layers).find(|&n| {
        provenance_after(mode, n)
            .iter()
            .all(|row| row.iter().all(|&b| b))
    })
}

/// Check that one layer's routing is a bijection on (pathway, channel)
/// indices for feature width `d`.
pub fn routing_is_bijection(mode: ShuffleMode, layer: usize, d: usize) -> bool {
    let table = routing(mode, layer);
    let mut used = vec![false; N_PATHWAYS * d];
    let mut total = 0usize;
    for sources in &table {
        for slice in sources {
            if d % slice.count != 0 {
                return false;
            }
            let width = d / slice.count;
            let start = slice.index * width;
            for c in start..start + width {
                let flat = slice.pathway * d + c;
                if used[flat] {
                    return false;
                }
                used[flat] = true;
                total += 1;
            }
        }
    }
    total == N_PATHWAYS * d
}

/// Run the fusion stage: `n_layers` of routed encoder blocks over the four
/// category pathways, then concatenation and the fusion projection.
/// Returns the fused `n x 4*d_model` features.
pub fn shuffle_stage(
    tape: &mut Tape,
    inputs: [Var; 4],
    bound: &BoundParams,
    mode: ShuffleMode,
    n_layers: usize,
    n_heads: usize,
) -> Result<Var> {
    let d = tape.value(inputs[0]).dims2().1;
    for v in &inputs[1..] {
        if tape.value(*v).shape() != tape.value(inputs[0]).shape() {
            return Err(ModelError::Config(
                "shuffle stage inputs must share a shape".into(),
            ));
        }
    }
    let divisor = match mode {
        ShuffleMode::Full => 4,
        ShuffleMode::PairToPair => 2,
        ShuffleMode::NoShuffle => 1,
    };
    if d % divisor != 0 {
        return Err(ModelError::Config(format!(
            "feature width {d} not divisible by {divisor} for {} mode",
            mode.name()
        )));
    }

    let mut pathways = inputs;
    for layer in 0..n_layers {
        let table = routing(mode, layer);
        // Pre-split each pathway once per distinct partition count.
        let mut routed: [Option<Var>; 4] = Default::default();
        for (dest, sources) in table.iter().enumerate() {
            let mut pieces = Vec::with_capacity(sources.len());
            for slice in sources {
                if slice.count == 1 {
                    pieces.push(pathways[slice.pathway]);
                } else {
                    let width = d / slice.count;
                    pieces.push(tape.slice(
                        pathways[slice.pathway],
                        1,
                        slice.index * width,
                        width,
                    )?);
                }
            }
            let input = if pieces.len() == 1 {
                pieces[0]
            } else {
                tape.concat(&pieces, 1)?
            };
            let vars = block_vars(bound, &format!("shuf.{dest}.{layer}"));
            routed[dest] = Some(encoder_block(tape, input, &vars, n_heads)?);
        }
        pathways = std::array::from_fn(|p| routed[p].expect("all pathways routed"));
    }

    let merged = tape.concat(&pathways, 1)?;
    let fused = tape.linear(merged, bound.var("fuse.w"), bound.var("fuse.b"))?;
    Ok(fused)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::PredicateCatalog;
    use crate::model::{init_params, ModelConfig};
    use crate::tensor::Tensor;
    use crate::testutil::{random_tensor, rng};

    #[test]
    fn full_mode_reaches_all_origins_after_one_layer() {
        let origins = provenance_after(ShuffleMode::Full, 1);
        assert!(origins.iter().all(|row| row.iter().all(|&b| b)));
        assert_eq!(provenance_closure_layer(ShuffleMode::Full, 8), Some(1));
    }

    #[test]
    fn pair_mode_closure_exactly_two_layers() {
        let after_one = provenance_after(ShuffleMode::PairToPair, 1);
        assert!(!after_one.iter().all(|row| row.iter().all(|&b| b)));
        assert_eq!(after_one[0], [true, true, false, false]);
        assert_eq!(provenance_closure_layer(ShuffleMode::PairToPair, 8), Some(2));
    }

    #[test]
    fn no_shuffle_never_closes() {
        assert_eq!(provenance_closure_layer(ShuffleMode::NoShuffle, 16), None);
        let origins = provenance_after(ShuffleMode::NoShuffle, 16);
        for (p, row) in origins.iter().enumerate() {
            for (k, &reached) in row.iter().enumerate() {
                assert_eq!(reached, p == k);
            }
        }
    }

    #[test]
    fn routing_is_a_channel_bijection_every_layer() {
        for mode in [ShuffleMode::Full, ShuffleMode::PairToPair, ShuffleMode::NoShuffle] {
            for layer in 0..6 {
                assert!(routing_is_bijection(mode, layer, 8), "{mode:?} layer {layer}");
            }
        }
    }

    #[test]
    fn full_mode_quarter_sources() {
        // Pathway 1's input after one full-shuffle routing is quarter 1 of
        // every stage-one pathway, in pathway order.
        let table = routing(ShuffleMode::Full, 0);
        assert_eq!(
            table[1],
            (0..4)
                .map(|src| SourceSlice { pathway: src, index: 1, count: 4 })
                .collect::<Vec<_>>()
        );
    }

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            d_model: 8,
            n_encoder_layers: 1,
            n_heads: 2,
            n_shuffle_layers: 2,
            ffn_hidden: 8,
            d_v: 4,
            d_e: 4,
            ..Default::default()
        }
    }

    #[test]
    fn no_shuffle_outputs_are_blockwise_independent() {
        // Perturb pathway 0's input; only the first quarter of the fused
        // pre-projection features may change. We check through the stage
        // with the fusion projection replaced by identity-like params, by
        // comparing pathway outputs before fusion: equivalently, run the
        // stage twice and compare the concat inputs via the fused output
        // with fuse.w = identity, fuse.b = 0.
        let catalog = PredicateCatalog::default_catalog();
        let config = tiny_config();
        let mut params = init_params(&config, &catalog).unwrap();
        let d4 = 4 * config.d_model;
        let mut eye = vec![0.0; d4 * d4];
        for i in 0..d4 {
            eye[i * d4 + i] = 1.0;
        }
        params.insert("fuse.w", Tensor::matrix(d4, d4, eye).unwrap());
        params.insert("fuse.b", Tensor::zeros(vec![d4]));

        let mut r = rng(9);
        let base: Vec<Tensor> = (0..4).map(|_| random_tensor(&mut r, &[3, 8])).collect();
        let run = |inputs: &[Tensor]| -> Vec<f64> {
            let mut tape = Tape::new();
            let bound = tape.bind(&params);
            let vars: [Var; 4] = std::array::from_fn(|i| tape.constant(inputs[i].clone()));
            let out = shuffle_stage(
                &mut tape,
                vars,
                &bound,
                ShuffleMode::NoShuffle,
                config.n_shuffle_layers,
                config.n_heads,
            )
            .unwrap();
            tape.value(out).data().to_vec()
        };

        let reference = run(&base);
        let mut perturbed = base.clone();
        let mut bumped = perturbed[0].data().to_vec();
        bumped[5] += 0.25;
        perturbed[0] = Tensor::matrix(3, 8, bumped).unwrap();
        let changed = run(&perturbed);

        let d = config.d_model;
        for row in 0..3 {
            for col in 0..d4 {
                let i = row * d4 + col;
                let delta = (reference[i] - changed[i]).abs();
                if col < d {
                    // pathway 0's block: allowed to change
                } else {
                    assert!(delta < 1e-12, "pathway {} leaked (col {col})", col / d);
                }
            }
        }
    }

    #[test]
    fn stage_output_shape() {
        let catalog = PredicateCatalog::default_catalog();
        let config = tiny_config();
        let params = init_params(&config, &catalog).unwrap();
        let mut r = rng(2);
        for mode in [ShuffleMode::Full, ShuffleMode::PairToPair, ShuffleMode::NoShuffle] {
            let mut tape = Tape::new();
            let bound = tape.bind(&params);
            let vars: [Var; 4] =
                std::array::from_fn(|_| tape.constant(random_tensor(&mut r, &[5, 8])));
            let out = shuffle_stage(&mut tape, vars, &bound, mode, 2, 2).unwrap();
            assert_eq!(tape.value(out).shape(), &[5, 32]);
        }
    }
}
