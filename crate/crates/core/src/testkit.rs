//! Property checks shared by the unit, integration and acceptance tests.
//!
//! Each check returns measured numbers (worst error, mismatch counts)
//! rather than asserting, so callers choose how to report them.

use std::collections::HashMap;
use std::sync::Arc;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{grad_check_many, relative_error, Tape, Var};
use crate::env::obs::{LOCAL_CHANNELS, VIEW};
use crate::env::{
    default_map, load_map, local_observation, transition, AgentEntry, AgentType, Collision, CondKind, Env, EnvConfig,
    EnvSpec, EnvState, GridMap, Object, ObjectKind, Pos,
};
use crate::error::Result;
use crate::interp::{extract_attention, probe_model, AgentPlacement, Aggregation, Layer, MapRef, ObjectPlacement, ProbeOptions, Scenario};
use crate::model::{ArchDims, Model, ModelConfig, PolicyInput, Variant};
use crate::oracles;
use crate::params::Binder;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::transformer::AttentionRecord;

/// `C = 8`, two heads, one layer per encoder.
pub fn tiny_dims() -> ArchDims {
    ArchDims {
        dim: 8,
        heads: 2,
        cond_layers: 1,
        local_layers: 1,
        ff_mult: 2,
        head_hidden: 16,
        n_cos: 8,
        train_quantiles: 4,
        eval_quantiles: 8,
        baseline_hidden: vec![16, 8],
        ..ArchDims::default()
    }
}

pub fn random_tensor<T: Scalar>(rng: &mut impl Rng, shape: &[usize], scale: f64) -> Tensor<T> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| T::lit(rng.random_range(-scale..scale))).collect()).expect("shape")
}

pub fn random_local<T: Scalar>(rng: &mut impl Rng) -> Tensor<T> {
    let n = LOCAL_CHANNELS * VIEW * VIEW;
    let data = (0..n)
        .map(|_| if rng.random_bool(0.15) { T::one() } else { T::zero() })
        .collect();
    Tensor::new(vec![LOCAL_CHANNELS, VIEW, VIEW], data).expect("shape")
}

/// Random policy input with a one-hot position map and random object maps.
pub fn random_input<T: Scalar>(rng: &mut impl Rng, cond: &[CondKind], height: usize, width: usize) -> PolicyInput<T> {
    let pos = Pos::new(rng.random_range(0..width as i32), rng.random_range(0..height as i32));
    let maps = cond
        .iter()
        .map(|&kind| {
            let mut t = Tensor::zeros(vec![kind.channels(), height, width]);
            match kind {
                CondKind::GPos => t.data_mut()[pos.y as usize * width + pos.x as usize] = T::one(),
                CondKind::OPos => t
                    .data_mut()
                    .iter_mut()
                    .for_each(|v| *v = if rng.random_bool(0.1) { T::one() } else { T::zero() }),
            }
            t
        })
        .collect();
    PolicyInput::new(random_local(rng), maps, pos).expect("valid input")
}

fn weighted_sum(tape: &mut Tape<f64>, out: Var, weights: &Tensor<f64>) -> Result<Var> {
    let w = tape.constant(weights.clone().reshape(tape.shape(out).to_vec())?);
    let prod = tape.mul(out, w)?;
    tape.sum(prod)
}

/// Keeps samples away from the kinks of `relu` and `huber`.
fn away_from(t: Tensor<f64>, points: &[f64], margin: f64) -> Tensor<f64> {
    let shape = t.shape().to_vec();
    let data = t
        .into_data()
        .into_iter()
        .map(|v| {
            let mut v = v;
            for &p in points {
                if (v - p).abs() < margin {
                    v = p + if v >= p { margin } else { -margin };
                }
            }
            v
        })
        .collect();
    Tensor::new(shape, data).expect("shape")
}

/// Worst finite-difference relative error of every primitive for one seed.
pub fn primitive_grad_errors(seed: u64) -> Result<Vec<(&'static str, f64)>> {
    const EPS: f64 = 1e-6;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut r = |shape: &[usize]| random_tensor::<f64>(&mut rng, shape, 1.0);
    let w34 = r(&[3, 4]);
    let w12 = r(&[12]);
    let w6 = r(&[6]);
    let a = r(&[3, 4]);
    let b = r(&[4, 2]);
    let c = r(&[3, 4]);
    let s = r(&[1]);
    let row = r(&[4]);
    let relu_x = away_from(r(&[3, 4]), &[0.0], 0.05);
    let huber_x = away_from(r(&[3, 4]).cast::<f64>(), &[-0.5, 0.5], 0.05);
    let ln_x = r(&[3, 4]);
    let gain = r(&[4]);
    let bias = r(&[4]);
    let wide = r(&[3, 2]);
    let tall = r(&[2, 4]);
    let q = r(&[3, 2]);
    let k = r(&[3, 2]);
    let v = r(&[3, 2]);

    let mut out = Vec::new();
    let mut check = |name: &'static str, err: Result<f64>| -> Result<()> {
        out.push((name, err?));
        Ok(())
    };
    let w8 = w34.clone().into_data()[..6].to_vec();
    let w32 = Tensor::vector(w8.clone());
    check(
        "matmul",
        grad_check_many(
            |t, x| {
                let y = t.matmul(x[0], x[1])?;
                weighted_sum(t, y, &w32)
            },
            &[a.clone(), b.clone()],
            EPS,
        ),
    )?;
    check(
        "transpose",
        grad_check_many(
            |t, x| {
                let y = t.transpose(x[0])?;
                weighted_sum(t, y, &w12)
            },
            std::slice::from_ref(&a),
            EPS,
        ),
    )?;
    for (name, op) in [("add", 0), ("sub", 1), ("mul", 2)] {
        check(
            name,
            grad_check_many(
                |t, x| {
                    let y = match op {
                        0 => t.add(x[0], x[1])?,
                        1 => t.sub(x[0], x[1])?,
                        _ => t.mul(x[0], x[1])?,
                    };
                    weighted_sum(t, y, &w12)
                },
                &[a.clone(), c.clone()],
                EPS,
            ),
        )?;
    }
    check(
        "mul_scalar",
        grad_check_many(
            |t, x| {
                let y = t.mul(x[0], x[1])?;
                weighted_sum(t, y, &w12)
            },
            &[a.clone(), s.clone()],
            EPS,
        ),
    )?;
    check(
        "add_row",
        grad_check_many(
            |t, x| {
                let y = t.add_row(x[0], x[1])?;
                weighted_sum(t, y, &w12)
            },
            &[a.clone(), row.clone()],
            EPS,
        ),
    )?;
    check(
        "scale",
        grad_check_many(
            |t, x| {
                let y = t.scale(x[0], -1.7)?;
                weighted_sum(t, y, &w12)
            },
            std::slice::from_ref(&a),
            EPS,
        ),
    )?;
    check(
        "relu",
        grad_check_many(
            |t, x| {
                let y = t.relu(x[0])?;
                weighted_sum(t, y, &w12)
            },
            std::slice::from_ref(&relu_x),
            EPS,
        ),
    )?;
    check(
        "gelu",
        grad_check_many(
            |t, x| {
                let y = t.gelu(x[0])?;
                weighted_sum(t, y, &w12)
            },
            std::slice::from_ref(&a),
            EPS,
        ),
    )?;
    for (name, axis) in [("softmax_rows", 1), ("softmax_cols", 0)] {
        check(
            name,
            grad_check_many(
                |t, x| {
                    let y = t.softmax(x[0], axis)?;
                    let sq = t.mul(y, y)?;
                    weighted_sum(t, sq, &w12)
                },
                std::slice::from_ref(&a),
                EPS,
            ),
        )?;
    }
    check(
        "layer_norm",
        grad_check_many(
            |t, x| {
                let y = t.layer_norm(x[0], x[1], x[2], 1e-5)?;
                weighted_sum(t, y, &w12)
            },
            &[ln_x.clone(), gain.clone(), bias.clone()],
            EPS,
        ),
    )?;
    let w3x6 = Tensor::vector((0..18).map(|i| ((i * 7) % 5) as f64 - 2.0).collect());
    check(
        "concat_last",
        grad_check_many(
            |t, x| {
                let y = t.concat_last(&[x[0], x[1]])?;
                weighted_sum(t, y, &w3x6)
            },
            &[a.clone(), wide.clone()],
            EPS,
        ),
    )?;
    let w5x4 = Tensor::vector((0..20).map(|i| ((i * 3) % 7) as f64 - 3.0).collect());
    check(
        "concat_rows",
        grad_check_many(
            |t, x| {
                let y = t.concat_rows(&[x[0], x[1]])?;
                weighted_sum(t, y, &w5x4)
            },
            &[a.clone(), tall.clone()],
            EPS,
        ),
    )?;
    let w8t = Tensor::vector(w12.data()[..8].to_vec());
    check(
        "slice_rows",
        grad_check_many(
            |t, x| {
                let y = t.slice_rows(x[0], 1, 2)?;
                weighted_sum(t, y, &w8t)
            },
            std::slice::from_ref(&a),
            EPS,
        ),
    )?;
    let w3 = Tensor::vector(w12.data()[..3].to_vec());
    check(
        "select_col",
        grad_check_many(
            |t, x| {
                let y = t.select_col(x[0], 2)?;
                weighted_sum(t, y, &w3)
            },
            std::slice::from_ref(&a),
            EPS,
        ),
    )?;
    check(
        "reshape",
        grad_check_many(
            |t, x| {
                let y = t.reshape(x[0], &[2, 6])?;
                let y = t.softmax(y, 1)?;
                weighted_sum(t, y, &w12)
            },
            std::slice::from_ref(&a),
            EPS,
        ),
    )?;
    check(
        "sum",
        grad_check_many(
            |t, x| {
                let y = t.mul(x[0], x[0])?;
                t.sum(y)
            },
            std::slice::from_ref(&a),
            EPS,
        ),
    )?;
    check(
        "mean",
        grad_check_many(
            |t, x| {
                let y = t.gelu(x[0])?;
                t.mean(y)
            },
            std::slice::from_ref(&a),
            EPS,
        ),
    )?;
    check(
        "huber",
        grad_check_many(
            |t, x| {
                let y = t.huber(x[0], 0.5)?;
                weighted_sum(t, y, &w12)
            },
            std::slice::from_ref(&huber_x),
            EPS,
        ),
    )?;
    check(
        "shared_leaf",
        grad_check_many(
            |t, x| {
                let xt = t.transpose(x[0])?;
                let gram = t.matmul(x[0], xt)?;
                let sq = t.mul(x[0], x[0])?;
                let a = t.sum(gram)?;
                let b = weighted_sum(t, sq, &w12)?;
                t.add(a, b)
            },
            std::slice::from_ref(&a),
            EPS,
        ),
    )?;
    let w3x2 = Tensor::vector(w6.data().to_vec());
    check(
        "attention",
        grad_check_many(
            |t, x| {
                let (o, _) = crate::transformer::scaled_dot_product_attention(t, x[0], x[1], x[2])?;
                weighted_sum(t, o, &w3x2)
            },
            &[q.clone(), k.clone(), v.clone()],
            EPS,
        ),
    )?;
    Ok(out)
}

/// Finite-difference check of a whole network with respect to every
/// parameter, through the loss `mean(values ⊙ c)` for random `c`.
pub fn model_grad_error(variant: Variant, cond: &[CondKind], seed: u64) -> Result<f64> {
    const EPS: f64 = 1e-6;
    let config = ModelConfig::build(variant, cond, 9, 9, &tiny_dims())?;
    let mut model: Model<f64> = Model::new(config, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let input = random_input::<f64>(&mut rng, cond, 9, 9);
    let coeffs: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
    let taus = [0.3, 0.75];
    let taus = variant.is_iqn().then_some(&taus[..]);

    let loss_of = |m: &Model<f64>, trainable: bool| -> Result<(f64, Vec<Tensor<f64>>)> {
        let mut tape = Tape::new();
        let mut binder = Binder::new(m.params(), trainable);
        let g = m.graph(&mut tape, &mut binder, &input, taus)?;
        let rows = tape.shape(g.values)[0];
        let c = Tensor::new(vec![rows, 4], (0..rows).flat_map(|_| coeffs.iter().copied()).collect())?;
        let c = tape.constant(c);
        let prod = tape.mul(g.values, c)?;
        let loss = tape.mean(prod)?;
        let value = tape.value(loss).data()[0];
        if !trainable {
            return Ok((value, Vec::new()));
        }
        tape.backward(loss)?;
        Ok((value, binder.gradients(&tape)))
    };

    let (_, analytic) = loss_of(&model, true)?;
    let ids: Vec<_> = model.params().ids().collect();
    let mut worst = 0f64;
    for (id, grad) in ids.into_iter().zip(analytic) {
        for k in 0..grad.len() {
            let original = model.params().get(id).data()[k];
            model.params_mut().get_mut(id).data_mut()[k] = original + EPS;
            let (plus, _) = loss_of(&model, false)?;
            model.params_mut().get_mut(id).data_mut()[k] = original - EPS;
            let (minus, _) = loss_of(&model, false)?;
            model.params_mut().get_mut(id).data_mut()[k] = original;
            worst = worst.max(relative_error(grad.data()[k], (plus - minus) / (2.0 * EPS)));
        }
    }
    Ok(worst)
}

fn record_row_error(record: &AttentionRecord) -> f64 {
    let mut worst = 0f64;
    for layer in &record.layers {
        for head in layer {
            for row in head.chunks(record.tokens) {
                if row.iter().any(|&w| !(0.0..=1.0).contains(&w)) {
                    return f64::INFINITY;
                }
                worst = worst.max((row.iter().sum::<f64>() - 1.0).abs());
            }
        }
    }
    worst
}

/// Worst `|Σ − 1|` over every attention row and every extracted heatmap
/// across `passes` random forward passes of `f32` networks.
pub fn attention_normalization(passes: usize, seed: u64) -> Result<f64> {
    let cond = [CondKind::GPos, CondKind::OPos];
    let dims = ArchDims {
        local_layers: 2,
        ..tiny_dims()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0f64;
    let mut model: Option<Model<f32>> = None;
    for pass in 0..passes {
        if pass % 20 == 0 {
            let variant = [Variant::Da6Dqn, Variant::Da6Iqn, Variant::Da3Dqn][(pass / 20) % 3];
            let config = ModelConfig::build(variant, &cond, 9, 9, &dims)?;
            model = Some(Model::new(config, rng.random())?);
        }
        let m = model.as_ref().expect("built above");
        let out = m.forward_policy(&random_input(&mut rng, &cond, 9, 9), true)?;
        let local = out.local.expect("attention model");
        worst = worst.max(record_row_error(&local));
        for r in &out.cm {
            worst = worst.max(record_row_error(r));
        }
        for layer in 0..local.layers.len() {
            for agg in [Aggregation::MeanHeads, Aggregation::PerHead] {
                for h in extract_attention(&local, Layer::Index(layer), agg)? {
                    if h.grid.iter().flatten().any(|&w| w < 0.0) || h.saliency < 0.0 {
                        return Ok(f64::INFINITY);
                    }
                    worst = worst.max((h.total() - 1.0).abs());
                }
            }
        }
    }
    Ok(worst)
}

/// Counts inputs where a DA3 network and a DA6 network without
/// conditional inputs, sharing weights, disagree in scores or heatmaps.
pub fn da3_da6_mismatches(inputs: usize, seed: u64) -> Result<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mismatches = 0;
    for i in 0..inputs {
        let (da3_variant, da6_variant) = if i % 2 == 0 {
            (Variant::Da3Dqn, Variant::Da6Dqn)
        } else {
            (Variant::Da3Iqn, Variant::Da6Iqn)
        };
        let da3: Model<f32> = Model::new(ModelConfig::build(da3_variant, &[], 25, 25, &tiny_dims())?, rng.random())?;
        let da6 = Model::from_params(ModelConfig::build(da6_variant, &[], 25, 25, &tiny_dims())?, da3.params().clone())?;
        let x = random_input::<f32>(&mut rng, &[], 25, 25);
        let a = da3.forward_policy(&x, true)?;
        let b = da6.forward_policy(&x, true)?;
        let heat = |r: &Option<AttentionRecord>| -> Result<_> {
            let r = r.as_ref().expect("attention model");
            Ok((
                extract_attention(r, Layer::Last, Aggregation::MeanHeads)?,
                extract_attention(r, Layer::Last, Aggregation::PerHead)?,
            ))
        };
        let same_bits = a.scores.iter().map(|s| s.to_bits()).eq(b.scores.iter().map(|s| s.to_bits()));
        if !same_bits || heat(&a.local)? != heat(&b.local)? {
            mismatches += 1;
        }
    }
    Ok(mismatches)
}

/// Pairs of cells on `map` whose local views are identical when empty.
fn matching_cells(map: &GridMap) -> Vec<Vec<Pos>> {
    let mut groups: HashMap<Vec<u32>, Vec<Pos>> = HashMap::new();
    for i in 0..map.width * map.height {
        let p = map.pos(i);
        if map.is_blocked(p) {
            continue;
        }
        let state = EnvState::staged(vec![p], vec![], 0);
        groups.entry(local_observation(map, &state, 0).ones).or_default().push(p);
    }
    let mut out: Vec<Vec<Pos>> = groups.into_values().filter(|g| g.len() >= 2).collect();
    out.sort();
    out
}

/// Scenario pairs on the default map: same local view, different
/// global position. Each pair has the observer, up to three objects and
/// sometimes a second agent at identical offsets.
pub fn scenario_pairs(count: usize, seed: u64) -> Vec<(Scenario, Scenario)> {
    let map = default_map();
    let groups = matching_cells(&map);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = (VIEW / 2) as i32;
    (0..count)
        .map(|_| {
            let group = groups.choose(&mut rng).expect("open cells exist");
            let mut picks = group.clone();
            picks.shuffle(&mut rng);
            let (p, q) = (picks[0], picks[1]);
            let mut offsets: Vec<(i32, i32)> = (-r..=r)
                .flat_map(|dy| (-r..=r).map(move |dx| (dx, dy)))
                .filter(|&(dx, dy)| (dx, dy) != (0, 0) && !map.is_blocked(Pos::new(p.x + dx, p.y + dy)))
                .collect();
            offsets.shuffle(&mut rng);
            let n_objects = rng.random_range(0..=3).min(offsets.len());
            let second = offsets.len() > n_objects && rng.random_bool(0.5);
            let kinds: Vec<ObjectKind> = (0..n_objects).map(|_| *ObjectKind::ALL.choose(&mut rng).unwrap()).collect();
            let build = |at: Pos| {
                let mut agents = vec![AgentPlacement {
                    kind: AgentType::A,
                    x: at.x,
                    y: at.y,
                }];
                if second {
                    let (dx, dy) = offsets[n_objects];
                    agents.push(AgentPlacement {
                        kind: AgentType::B,
                        x: at.x + dx,
                        y: at.y + dy,
                    });
                }
                Scenario {
                    name: None,
                    description: None,
                    approximate: false,
                    map: MapRef::Default,
                    agents,
                    objects: kinds
                        .iter()
                        .zip(&offsets)
                        .map(|(&kind, &(dx, dy))| ObjectPlacement {
                            kind,
                            x: at.x + dx,
                            y: at.y + dy,
                        })
                        .collect(),
                    observer: 0,
                    cond: Some(vec![CondKind::GPos]),
                    expected_action: None,
                }
            };
            (build(p), build(q))
        })
        .collect()
}

/// For each pair: whether a DA3 network's heatmaps were bit-identical,
/// and whether a randomly initialised DA6 network's heatmaps differed.
pub fn conditional_independence(pairs: usize, seed: u64) -> Result<(usize, usize)> {
    let map = default_map();
    let da3: Model<f32> = Model::new(ModelConfig::build(Variant::Da3Dqn, &[CondKind::GPos], 25, 25, &tiny_dims())?, seed)?;
    let da6: Model<f32> = Model::new(ModelConfig::build(Variant::Da6Dqn, &[CondKind::GPos], 25, 25, &tiny_dims())?, seed)?;
    let mut identical = 0;
    let mut differing = 0;
    for (a, b) in scenario_pairs(pairs, seed) {
        let probe = |m: &Model<f32>, s: &Scenario, agg| probe_model(m, s, &map, ProbeOptions { layer: Layer::Last, agg });
        let same = [Aggregation::MeanHeads, Aggregation::PerHead]
            .into_iter()
            .map(|agg| Ok(probe(&da3, &a, agg)?.heatmaps == probe(&da3, &b, agg)?.heatmaps))
            .collect::<Result<Vec<bool>>>()?;
        if same.iter().all(|&s| s) {
            identical += 1;
        }
        if probe(&da6, &a, Aggregation::MeanHeads)?.heatmaps != probe(&da6, &b, Aggregation::MeanHeads)?.heatmaps {
            differing += 1;
        }
    }
    Ok((identical, differing))
}

fn task_of(kind: AgentType) -> oracles::Task {
    let (symbols, regions) = match kind {
        AgentType::A => (vec!['s'], vec![0, 3]),
        AgentType::B => (vec!['t'], vec![1, 2]),
        AgentType::C => (vec!['s', 't'], vec![0, 1]),
        AgentType::D => (vec!['s', 't'], vec![2, 3]),
    };
    oracles::Task { symbols, regions }
}

/// Compares the transition function with the brute-force oracle on
/// random 5×5 two-agent states under all 16 joint actions. Returns
/// `(comparisons, mismatches)`.
pub fn env_oracle_mismatches(states: usize, seed: u64) -> Result<(usize, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let types = [AgentType::A, AgentType::B, AgentType::C, AgentType::D];
    let actions = crate::env::Action::ALL;
    let (mut comparisons, mut mismatches) = (0, 0);
    for _ in 0..states {
        let rows: Vec<String> = (0..5)
            .map(|_| (0..5).map(|_| if rng.random_bool(0.2) { '#' } else { 'b' }).collect())
            .collect();
        let open: Vec<Pos> = (0..25)
            .map(|i| Pos::new(i % 5, i / 5))
            .filter(|p| rows[p.y as usize].as_bytes()[p.x as usize] != b'#')
            .collect();
        if open.len() < 3 {
            continue;
        }
        let mut cells = open.clone();
        cells.shuffle(&mut rng);
        let agents = vec![cells[0], cells[1]];
        let mut grid = rows.clone();
        for p in &agents {
            grid[p.y as usize].replace_range(p.x as usize..p.x as usize + 1, "B");
        }
        let kinds = [*types.choose(&mut rng).unwrap(), *types.choose(&mut rng).unwrap()];
        let config = EnvConfig {
            roster: kinds.iter().map(|&k| AgentEntry::of(k)).collect(),
            objects_per_type: [0, 0],
            horizon: 10,
            ..EnvConfig::default()
        };
        let spec = EnvSpec::new(load_map(&(grid.join("\n") + "\n"))?, &config)?;
        let mut object_cells = open.clone();
        object_cells.shuffle(&mut rng);
        let n_objects = rng.random_range(0..=6usize).min(object_cells.len());
        let objects: Vec<Object> = object_cells[..n_objects]
            .iter()
            .map(|&pos| Object {
                kind: *ObjectKind::ALL.choose(&mut rng).unwrap(),
                pos,
            })
            .collect();
        let state = EnvState::staged(agents.clone(), objects.clone(), rng.random());

        let grid_refs: Vec<&str> = grid.iter().map(String::as_str).collect();
        let oracle_objects: Vec<(char, i32, i32)> = objects
            .iter()
            .map(|o| (if o.kind == ObjectKind::Star { 's' } else { 't' }, o.pos.x, o.pos.y))
            .collect();
        let tasks: Vec<oracles::Task> = kinds.iter().map(|&k| task_of(k)).collect();
        for a0 in actions {
            for a1 in actions {
                comparisons += 1;
                let expected = oracles::env_step(
                    &grid_refs,
                    &[(agents[0].x, agents[0].y), (agents[1].x, agents[1].y)],
                    &oracle_objects,
                    &tasks,
                    &[a0.delta(), a1.delta()],
                );
                let mut next = state.clone();
                let tr = transition(&spec, &mut next, &[a0, a1])?;
                let positions: Vec<(i32, i32)> = next.agents.iter().map(|p| (p.x, p.y)).collect();
                let collisions: Vec<Option<bool>> = tr
                    .collisions
                    .iter()
                    .map(|c| c.map(|c| c == Collision::Wall))
                    .collect();
                let mut ok = positions == expected.positions
                    && tr.rewards == expected.rewards
                    && collisions == expected.collisions
                    && tr.collected == expected.collected.iter().map(Option::is_some).collect::<Vec<_>>()
                    && next.t == 1;
                let moved: Vec<usize> = expected.collected.iter().flatten().copied().collect();
                for (k, (before, after)) in objects.iter().zip(&next.objects).enumerate() {
                    if before.kind != after.kind {
                        ok = false;
                    } else if moved.contains(&k) {
                        let spawn = spec.map.spawn_cells(after.kind);
                        let clash = next.objects.iter().enumerate().any(|(j, o)| j != k && o.pos == after.pos);
                        ok &= spawn.contains(&after.pos) && !clash && !next.agents.contains(&after.pos);
                    } else {
                        ok &= before.pos == after.pos;
                    }
                }
                if !ok {
                    mismatches += 1;
                }
            }
        }
    }
    Ok((comparisons, mismatches))
}

/// Random-action episodes on the default map; counts steps where an
/// object count changed, two agents shared a cell or an entity stood on
/// a wall.
pub fn conservation_violations(episodes: usize, seed: u64) -> Result<usize> {
    let spec = EnvSpec::new(default_map(), &EnvConfig::default())?;
    let wanted = spec.objects_per_type;
    let mut env = Env::new(Arc::new(spec), Vec::new(), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut violations = 0;
    for e in 0..episodes {
        env.reset(seed.wrapping_add(e as u64))?;
        loop {
            let actions: Vec<_> = (0..env.spec().num_agents())
                .map(|_| *crate::env::Action::ALL.choose(&mut rng).unwrap())
                .collect();
            let step = env.step(&actions)?;
            let s = env.state();
            let map = &env.spec().map;
            let counts = [s.object_count(ObjectKind::Star), s.object_count(ObjectKind::Triangle)];
            let mut seen = std::collections::HashSet::new();
            let distinct = s.agents.iter().all(|p| seen.insert(*p));
            let on_wall = s.agents.iter().chain(s.objects.iter().map(|o| &o.pos)).any(|&p| map.is_blocked(p));
            if counts != wanted || !distinct || on_wall {
                violations += 1;
            }
            if step.done {
                break;
            }
        }
    }
    Ok(violations)
}

/// Random-action episodes on the default map; counts episodes whose
/// per-agent return differs from `objects·r_obj + collisions·r_col`
/// computed from the step log, or whose metrics disagree with that log.
pub fn reward_accounting_violations(episodes: usize, seed: u64) -> Result<usize> {
    let config = EnvConfig::default();
    let spec = EnvSpec::new(default_map(), &config)?;
    let n = spec.num_agents();
    let mut env = Env::new(Arc::new(spec), Vec::new(), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut violations = 0;
    for e in 0..episodes {
        env.reset(seed.wrapping_add(e as u64))?;
        let mut returns = vec![0f64; n];
        let mut collected = vec![0usize; n];
        let mut collided = vec![0usize; n];
        let mut metrics = crate::training::EpisodeMetrics::new(e, n);
        loop {
            let actions: Vec<_> = (0..n).map(|_| *crate::env::Action::ALL.choose(&mut rng).unwrap()).collect();
            let step = env.step(&actions)?;
            metrics.record(&step.rewards, &step.info);
            for i in 0..n {
                returns[i] += step.rewards[i] as f64;
                collected[i] += usize::from(step.info.collected[i]);
                collided[i] += usize::from(step.info.collisions[i].is_some());
            }
            if step.done {
                break;
            }
        }
        let ok = (0..n).all(|i| {
            let expected = collected[i] as f64 * config.reward_object as f64
                + collided[i] as f64 * config.reward_collision as f64;
            (returns[i] - expected).abs() < 1e-6
                && (metrics.rewards[i] as f64 - expected).abs() < 1e-3
                && metrics.collections[i] == collected[i]
                && metrics.collisions[i] == collided[i]
        }) && metrics.agent_collisions + metrics.wall_collisions == collided.iter().sum::<usize>();
        if !ok {
            violations += 1;
        }
    }
    Ok(violations)
}
