//! Acceptance suite. Every criterion prints one `PASS`/`FAIL` line before
//! asserting, so `cargo test --test acceptance -- --nocapture` gives a
//! readable summary.

use std::path::Path;
use std::time::{Duration, Instant};

use pimcnn::accumulator::{asr_shift, compress_4_2, AccumulatorConfig, NvAccumulatorState, NvMode};
use pimcnn::bitplane::QuantizedTensor;
use pimcnn::bits::BitVector;
use pimcnn::config::{random_inputs, ModelConfig};
use pimcnn::costmodel::{
    accumulation_cycles, alexnet_layers, complexity_index, popcount_cycles, storage_footprint, CostParams,
};
use pimcnn::engine::{conv_bitwise, run_network, ConvLayerSpec, MemoryHierarchy, Network, NetworkProgram, Padding};
use pimcnn::intermittency::{progress_stats, run_with_trace, EventKind, IntermittencyPolicy, PowerTrace};
use pimcnn::oracle::conv_int_oracle;
use pimcnn::subarray::{sense_margin_mc, DeviceParams, SenseMode};
use pimcnn::tensor::IntTensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

fn verdict(id: u32, title: &str, ok: bool, detail: &str) {
    println!("{} criterion {id:>2} {title}: {detail}", if ok { "PASS" } else { "FAIL" });
}

const SMALL_NET: &str = r#"
name = "acceptance"
input_shape = [2, 8, 8]

[[layers]]
kind = "conv"
out_channels = 4
kernel = [3, 3]
padding = 1
weight_bits = 2
input_bits = 2
activation = "half_tanh"
bn = { mean = 4.0, var = 4.0, gamma = 1.0, beta = 0.0 }

[[layers]]
kind = "avgpool"
window = 2
stride = 2

[[layers]]
kind = "conv"
out_channels = 4
kernel = [3, 3]
weight_bits = 2
input_bits = 2
activation = "sign"

[[layers]]
kind = "fc"
out_features = 3
quantize = false
"#;

fn small_net() -> Network {
    ModelConfig::parse(SMALL_NET).unwrap().build(Path::new("."), 11).unwrap()
}

fn random_q(rng: &mut ChaCha8Rng, shape: Vec<usize>, bits: u32) -> QuantizedTensor {
    let n: usize = shape.iter().product();
    let max = if bits == 32 { u32::MAX } else { (1u32 << bits) - 1 };
    QuantizedTensor::new(shape, bits, (0..n).map(|_| rng.random_range(0..=max)).collect()).unwrap()
}

fn as_int(q: &QuantizedTensor) -> IntTensor {
    IntTensor::new(q.shape().to_vec(), q.values().iter().map(|&v| u64::from(v)).collect()).unwrap()
}

/// One random convolution at bit widths `(m, n)`; returns whether it matched.
fn one_conv(seed: u64, m: u32, n: u32) -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = rng.random_range(1..=3);
    let k = rng.random_range(1..=3);
    let kh = rng.random_range(1..=3);
    let kw = rng.random_range(1..=3);
    let h = rng.random_range(kh..=kh + 4);
    let w = rng.random_range(kw..=kw + 4);
    let mut layer = ConvLayerSpec::new((kh, kw), c, k, (n, m));
    layer.stride = rng.random_range(1..=2);
    let pad = rng.random_range(0..=1);
    layer.padding = if pad == 0 { Padding::None } else { Padding::Zero(pad) };
    let input = random_q(&mut rng, vec![c, h, w], m);
    let weights = random_q(&mut rng, vec![k, c, kh, kw], n);
    let hier = MemoryHierarchy::default();
    let (got, _) = conv_bitwise(&input, &weights, &layer, &hier, &CostParams::default()).unwrap();
    let want = conv_int_oracle(&as_int(&input), &as_int(&weights), &layer).unwrap();
    got == want
}

#[test]
fn criterion_01_bitplane_conv_matches_oracle() {
    let widths = [1u32, 2, 4, 8];
    let pairs: Vec<(u32, u32)> = widths.iter().flat_map(|&m| widths.iter().map(move |&n| (m, n))).collect();
    let per_pair = 625u64;
    let start = Instant::now();
    let mismatches: usize = (0..pairs.len() as u64 * per_pair)
        .into_par_iter()
        .filter(|&i| {
            let (m, n) = pairs[(i / per_pair) as usize];
            !one_conv(0xC0FFEE + i, m, n)
        })
        .count();
    let elapsed = start.elapsed();
    let total = pairs.len() as u64 * per_pair;
    let ok = mismatches == 0 && elapsed < Duration::from_secs(120);
    verdict(
        1,
        "bit-plane convolution is bit-identical to the integer oracle",
        ok,
        &format!("{total} convs over 16 width pairs, {mismatches} mismatches, {:.2} s", elapsed.as_secs_f64()),
    );
    assert!(ok);
}

#[test]
fn criterion_02_compressor_identity() {
    let start = Instant::now();
    let mut bad = 0;
    for bits in 0u8..32 {
        let x: Vec<bool> = (0..5).map(|i| bits >> i & 1 == 1).collect();
        let o = compress_4_2(x[0], x[1], x[2], x[3], x[4]);
        let lhs: u32 = x.iter().map(|&b| u32::from(b)).sum();
        let rhs = u32::from(o.sum) + 2 * (u32::from(o.carry) + u32::from(o.cout));
        bad += usize::from(lhs != rhs);
    }
    let elapsed = start.elapsed();
    let ok = bad == 0 && elapsed < Duration::from_secs(1);
    verdict(
        2,
        "4:2 compressor identity",
        ok,
        &format!("32 input combinations, {bad} violations, {} us", elapsed.as_micros()),
    );
    assert!(ok);
}

#[test]
fn criterion_03_shift_register() {
    let example = asr_shift(&BitVector::from_msb_str("1001").unwrap(), 1, 2).unwrap().to_msb_string();
    let mut bad = 0;
    let mut cases = 0;
    for w in 1..=8usize {
        for max_shift in 0..=8u32 {
            for s in 0..=max_shift {
                for v in 0..(1u64 << w) {
                    let out = asr_shift(&BitVector::from_uint(v, w), s, max_shift).unwrap();
                    cases += 1;
                    bad += usize::from(out.len() != w + max_shift as usize || out.to_uint() != v << s);
                }
            }
        }
    }
    let ok = example == "010010" && bad == 0;
    verdict(
        3,
        "shift register",
        ok,
        &format!("\"1001\" << 1 in 6 cells = \"{example}\"; {cases} exhaustive cases, {bad} wrong"),
    );
    assert!(ok);
}

#[test]
fn criterion_04_complexity_column() {
    let expected = [((1, 1), (1, 9)), ((1, 4), (4, 12)), ((1, 8), (8, 16)), ((2, 2), (4, 20))];
    let got: Vec<_> = expected.iter().map(|&((w, i), _)| complexity_index(w, i, 8).unwrap()).collect();
    let ok = expected.iter().zip(&got).all(|((_, e), g)| e == g);
    let shown: Vec<String> = expected
        .iter()
        .zip(&got)
        .map(|(((w, i), _), g)| format!("({w},{i})->{g:?}"))
        .collect();
    verdict(4, "complexity index with g_bits = 8", ok, &shown.join(" "));
    assert!(ok);
}

#[test]
fn criterion_05_intermittent_runs_match_uninterrupted() {
    let net = small_net();
    let hier = MemoryHierarchy::default();
    let cost = CostParams::default();
    let input = random_inputs(net.input_shape(), 1, 5).remove(0);
    let reference = run_network(&net, &input, &hier, &cost).unwrap().scores;
    let policy = IntermittencyPolicy {
        checkpoint_interval: 20,
        nv_mode: NvMode::TwoFf,
        ..Default::default()
    };

    let mut prog = NetworkProgram::new(&net, &input, &hier, &cost).unwrap();
    let base = run_with_trace(&mut prog, &PowerTrace::always_on(), &policy).unwrap();
    let base_stats = progress_stats(&base.journal).unwrap();
    let always_on_ok = base.output.as_ref() == Some(&reference);
    let mean_on = base_stats.powered_cycles as f64 / 5.0;

    let results: Vec<(bool, u64, u64)> = (0..100u64)
        .into_par_iter()
        .map(|seed| {
            let trace = PowerTrace::exponential(seed, mean_on, 100.0).unwrap();
            let mut prog = NetworkProgram::new(&net, &input, &hier, &cost).unwrap();
            let out = run_with_trace(&mut prog, &trace, &policy).unwrap();
            let stats = progress_stats(&out.journal).unwrap();
            (out.output.as_ref() == Some(&reference), stats.max_replay_per_restore, stats.restores)
        })
        .collect();
    let identical = results.iter().filter(|r| r.0).count();
    let max_replay = results.iter().map(|r| r.1).max().unwrap_or(0);
    let restores: u64 = results.iter().map(|r| r.2).sum();
    let ok = always_on_ok && identical == 100 && max_replay <= 20 && restores > 0;
    verdict(
        5,
        "intermittent execution is output-invariant",
        ok,
        &format!(
            "{identical}/100 traces bit-identical, {restores} restores, max replay {max_replay} frames (K=20), mean_on {mean_on:.0} of {} cycles",
            base_stats.powered_cycles
        ),
    );
    assert!(ok);
}

#[test]
fn criterion_06_compressor_vs_serial() {
    let comp = CostParams::default();
    let serial = CostParams::serial_baseline();
    let (c, s) = (accumulation_cycles(8, &comp), accumulation_cycles(8, &serial));
    let (pc, ps) = (popcount_cycles(8, &comp), popcount_cycles(8, &serial));
    let ratio = c as f64 / s as f64;
    let ok = 2 * c <= s;
    verdict(
        6,
        "compressor accumulation at most half of serial bit-count",
        ok,
        &format!(
            "8-bit vector: {c} vs {s} cycles, ratio {ratio:.3}; popcount alone {pc} vs {ps}, ratio {:.3}",
            pc as f64 / ps as f64
        ),
    );
    assert!(ok);
}

#[test]
fn criterion_07_default_capacity() {
    let h = MemoryHierarchy::default();
    let bits = h.capacity_bits();
    let ok = bits == 512 * 1024 * 1024;
    verdict(
        7,
        "default memory hierarchy capacity",
        ok,
        &format!("{} mats x {} bits = {bits} bits = {} Mb", h.total_mats(), h.bits_per_mat(), bits / (1 << 20)),
    );
    assert!(ok);
}

#[test]
fn criterion_08_storage_model() {
    let layers = alexnet_layers();
    let f64b = storage_footprint(&layers, 64, 64, false).unwrap();
    let f32b = storage_footprint(&layers, 32, 32, false).unwrap();
    let q = storage_footprint(&layers, 1, 1, true).unwrap();
    let exact_two = f64b.total_bytes == 2 * f32b.total_bytes;
    let mb = q.total_mb();
    let shrink = f32b.total_bytes as f64 / q.total_bytes as f64;
    let ok = exact_two && (40.0 * 0.65..=40.0 * 1.35).contains(&mb) && (4.0..=13.0).contains(&shrink);
    println!("{q}");
    verdict(
        8,
        "storage footprint",
        ok,
        &format!(
            "64/32-bit ratio {}; 1:1 total {mb:.2} MB (anchor 40 MB +/-35%), {shrink:.2}x smaller than 32-bit {:.2} MB",
            if exact_two { "exactly 2" } else { "not 2" },
            f32b.total_mb()
        ),
    );
    assert!(ok);
}

#[test]
fn criterion_09_sense_margin_monte_carlo() {
    let sigmas = [0.0, 0.05, 0.10, 0.15];
    let start = Instant::now();
    let zero = sense_margin_mc(
        &DeviceParams {
            sigma_ra: 0.0,
            sigma_tmr: 0.0,
            ..Default::default()
        },
        100_000,
        1,
    )
    .unwrap();
    let zero_ok = zero.states.iter().all(|s| s.misclass_rate == 0.0) && zero.modes.iter().all(|m| m.misclass_rate == 0.0);
    let rates: Vec<Vec<f64>> = sigmas
        .iter()
        .map(|&s| {
            let r = sense_margin_mc(
                &DeviceParams {
                    sigma_ra: s,
                    ..Default::default()
                },
                100_000,
                1,
            )
            .unwrap();
            SenseMode::ALL.iter().map(|&m| r.mode_rate(m)).collect()
        })
        .collect();
    let elapsed = start.elapsed();
    let monotone = rates.windows(2).all(|w| w[0].iter().zip(&w[1]).all(|(a, b)| a <= b));
    let ok = zero_ok && monotone && elapsed < Duration::from_secs(10);
    let shown: Vec<String> = sigmas
        .iter()
        .zip(&rates)
        .map(|(s, r)| format!("{s:.2}:{:.4}", r.iter().cloned().fold(0.0, f64::max)))
        .collect();
    verdict(
        9,
        "sense-margin Monte Carlo",
        ok,
        &format!(
            "zero sigmas {} errors; worst-mode rate by sigma_ra {}; {}; {:.2} s",
            if zero_ok { "no" } else { "some" },
            shown.join(" "),
            if monotone { "monotone" } else { "not monotone" },
            elapsed.as_secs_f64()
        ),
    );
    assert!(ok);
}

/// Restored state after a fault between the shadow write and the validity
/// flip must equal the state restored from the previous checkpoint.
fn accumulator_fault(seed: u64) -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mode = if rng.random_bool(0.5) { NvMode::TwoFf } else { NvMode::OneFf };
    let width = rng.random_range(4..=32);
    let mut acc = NvAccumulatorState::new(AccumulatorConfig {
        width,
        checkpoint_interval: 20,
        mode,
    });
    let limit = 1u64 << (width - 2);
    for _ in 0..rng.random_range(1..5) {
        let _ = acc.accumulate(rng.random_range(0..limit));
    }
    if rng.random_bool(0.8) {
        acc.checkpoint();
    }
    for _ in 0..rng.random_range(1..5) {
        let _ = acc.accumulate(rng.random_range(0..limit));
    }
    let mut expected = acc.clone();
    expected.power_loss();
    let expected_restore = expected.restore().is_ok();

    acc.begin_checkpoint();
    acc.power_loss();
    let restored = acc.restore().is_ok();
    restored == expected_restore && acc.value() == expected.value() && acc.carry() == expected.carry()
}

#[test]
fn criterion_10_checkpoint_atomicity() {
    let acc_mixed = (0..1000u64).filter(|&s| !accumulator_fault(s)).count();

    // system level: cut power inside every checkpoint window of a real run
    let net = small_net();
    let hier = MemoryHierarchy::default();
    let cost = CostParams::default();
    let input = random_inputs(net.input_shape(), 1, 9).remove(0);
    let policy = IntermittencyPolicy::default();
    let mut prog = NetworkProgram::new(&net, &input, &hier, &cost).unwrap();
    let base = run_with_trace(&mut prog, &PowerTrace::always_on(), &policy).unwrap();
    let reference = base.output.clone().unwrap();

    // (cut cycle, frame the record held before this checkpoint)
    let mut windows: Vec<(u64, u64, usize)> = Vec::new();
    let mut last_record = 0usize;
    for e in &base.journal.events {
        match e.kind {
            EventKind::Checkpoint => {
                let dirty = e.detail.value.unwrap();
                windows.push((e.cycle - (2 * dirty + 2), e.cycle, last_record));
                last_record = e.detail.frame.unwrap_or(0);
            }
            EventKind::StageCommit => last_record = 0,
            _ => {}
        }
    }
    let cuts: Vec<(u64, usize)> = (0..1000usize)
        .map(|i| {
            let (lo, hi, prev) = windows[i % windows.len()];
            (lo + (i / windows.len()) as u64 % (hi - lo), prev)
        })
        .collect();
    let bad: Vec<String> = cuts
        .par_iter()
        .filter_map(|&(cut, prev)| {
            let trace = PowerTrace::explicit(vec![(cut, 10), (u64::MAX / 4, 10)]).unwrap();
            let mut prog = NetworkProgram::new(&net, &input, &hier, &cost).unwrap();
            let out = run_with_trace(&mut prog, &trace, &policy).unwrap();
            let ev = &out.journal.events;
            let torn = ev.iter().position(|e| e.kind == EventKind::CheckpointTorn);
            let restore = ev.iter().find(|e| e.kind == EventKind::Restore);
            let ok = torn.is_some()
                && restore.is_some_and(|r| r.detail.frame == Some(prev))
                && out.output.as_ref() == Some(&reference);
            (!ok).then(|| format!("cut at {cut}"))
        })
        .collect();
    let ok = acc_mixed == 0 && bad.is_empty();
    verdict(
        10,
        "checkpoint atomicity under injected faults",
        ok,
        &format!(
            "1000 accumulator faults, {acc_mixed} mixed states; 1000 system faults across {} checkpoint windows, {} not restored to the previous record",
            windows.len(),
            bad.len()
        ),
    );
    assert!(ok, "{bad:?}");
}
