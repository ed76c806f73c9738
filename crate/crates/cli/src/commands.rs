use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{anyhow, Context};
use pimcnn::accumulator::NvMode;
use pimcnn::config::{OutputFormat, SimConfig};
use pimcnn::costmodel::{alexnet_layers, complexity_index, storage_footprint, CostParams, CostReport};
use pimcnn::engine::{run_network, stage_cost, MemoryHierarchy, Network, NetworkProgram};
use pimcnn::intermittency::{progress_stats, run_with_trace, IntermittencyPolicy};
use pimcnn::oracle::network_oracle;
use pimcnn::subarray::{sense_margin_mc, DeviceParams, SenseMode};
use serde::{Deserialize, Serialize};

use crate::output::{write_json, write_rows, write_text};
use crate::{CmdResult, Failure};

#[derive(Debug, Serialize, Deserialize)]
pub struct CostRow {
    pub stage: String,
    pub cycles: u64,
    pub latency_ns: f64,
    pub energy_pj: f64,
    pub and_cycles: u64,
    pub write_back_cycles: u64,
    pub cmp_cycles: u64,
    pub shift_cycles: u64,
    pub accumulate_cycles: u64,
    pub nv_checkpoint_cycles: u64,
    pub epu_cycles: u64,
    pub popcounts: u64,
}

impl CostRow {
    fn new(stage: &str, r: &CostReport) -> Self {
        let p = &r.phases;
        Self {
            stage: stage.to_string(),
            cycles: r.cycles,
            latency_ns: r.latency_ns,
            energy_pj: r.energy_pj,
            and_cycles: p.and.cycles,
            write_back_cycles: p.write_back.cycles,
            cmp_cycles: p.cmp.cycles,
            shift_cycles: p.shift.cycles,
            accumulate_cycles: p.accumulate.cycles,
            nv_checkpoint_cycles: p.nv_checkpoint.cycles,
            epu_cycles: p.epu.cycles,
            popcounts: r.popcounts,
        }
    }
}

#[derive(Debug, Serialize)]
struct ScoreRow {
    sample: usize,
    class: usize,
    score: f64,
    predicted: bool,
}

fn model_cost(net: &Network, hier: &MemoryHierarchy, cost: &CostParams) -> anyhow::Result<CostReport> {
    let mut total = CostReport::default();
    for s in 0..net.layers().len() {
        total.merge(&stage_cost(net, s, hier, cost)?);
    }
    Ok(total)
}

/// Index and values of the first element where two slices differ.
fn first_divergence(got: &[f64], want: &[f64]) -> Option<(usize, f64, f64)> {
    got.iter()
        .zip(want)
        .enumerate()
        .find(|(_, (a, b))| a.to_bits() != b.to_bits())
        .map(|(i, (a, b))| (i, *a, *b))
}

pub fn run(cfg: &SimConfig, verify: bool) -> CmdResult {
    let (model, net) = cfg.load_model()?;
    let inputs = cfg.inputs(&net)?;
    let mut scores = Vec::new();
    let mut last = None;
    for (i, x) in inputs.iter().enumerate() {
        let run = run_network(&net, x, &cfg.hierarchy, &cfg.cost)?;
        if verify {
            let want = network_oracle(&net, x)?;
            for (stage, w) in run.stages.iter().zip(&want) {
                if stage.output.shape() != w.shape() {
                    return Err(Failure::Verification(format!(
                        "sample {i}, stage {}: shape {:?} vs reference {:?}",
                        stage.name,
                        stage.output.shape(),
                        w.shape()
                    )));
                }
                if let Some((k, a, b)) = first_divergence(stage.output.data(), w.data()) {
                    return Err(Failure::Verification(format!(
                        "sample {i}, stage {}, element {k}: simulator {a} vs reference {b}",
                        stage.name
                    )));
                }
            }
        }
        let pred = run.prediction();
        for (c, &s) in run.scores.data().iter().enumerate() {
            scores.push(ScoreRow {
                sample: i,
                class: c,
                score: s,
                predicted: c == pred,
            });
        }
        println!("sample {i}: predicted class {pred}");
        last = Some(run);
    }
    let run = last.ok_or_else(|| anyhow!("no inputs"))?;
    let mut rows: Vec<CostRow> = run.stages.iter().map(|s| CostRow::new(&s.name, &s.cost)).collect();
    rows.push(CostRow::new("total", &run.cost));

    let dir = &cfg.output.dir;
    let fmt = cfg.output.format;
    let a = write_rows(dir, "scores", fmt, &scores)?;
    let b = write_rows(dir, "cost", fmt, &rows)?;
    println!(
        "model {}: {} samples, {} cycles, {:.3} us, {:.1} nJ per inference",
        model.name,
        inputs.len(),
        run.cost.cycles,
        run.cost.latency_ns / 1e3,
        run.cost.energy_pj / 1e3
    );
    if verify {
        println!("verified {} samples against the reference, all stages identical", inputs.len());
    }
    println!("wrote {} and {}", a.display(), b.display());
    Ok(())
}

#[derive(Debug, Serialize)]
struct BitwidthRow {
    w_bits: u32,
    i_bits: u32,
    complexity_w: u64,
    complexity_total: u64,
    reference_storage_mb: f64,
    reference_storage_vs_32bit: f64,
    model_cycles: u64,
    model_energy_pj: f64,
}

fn with_bits(net: &Network, w: u32, i: u32) -> anyhow::Result<Network> {
    let mut layers = net.layers().to_vec();
    for l in layers.iter_mut().filter(|l| l.spec.quantize) {
        l.spec.weight_bits = w;
        l.spec.input_bits = i;
    }
    Ok(Network::new(net.input_shape(), layers)?)
}

pub fn sweep_bitwidth(cfg: &SimConfig) -> CmdResult {
    let points = &cfg.sweep.bitwidths;
    if points.is_empty() {
        return Err(anyhow!("sweep.bitwidths is empty").into());
    }
    let (_, net) = cfg.load_model()?;
    let reference = alexnet_layers();
    let full = storage_footprint(&reference, 32, 32, false)?;
    let mut rows = Vec::new();
    for &[w, i] in points {
        let (cw, ct) = complexity_index(w, i, cfg.sweep.g_bits)?;
        let st = storage_footprint(&reference, w, i, true)?;
        let cost = model_cost(&with_bits(&net, w, i)?, &cfg.hierarchy, &cfg.cost)?;
        rows.push(BitwidthRow {
            w_bits: w,
            i_bits: i,
            complexity_w: cw,
            complexity_total: ct,
            reference_storage_mb: st.total_mb(),
            reference_storage_vs_32bit: full.total_bytes as f64 / st.total_bytes as f64,
            model_cycles: cost.cycles,
            model_energy_pj: cost.energy_pj,
        });
    }
    let path = write_rows(&cfg.output.dir, "sweep_bitwidth", cfg.output.format, &rows)?;
    println!("{} points, wrote {}", rows.len(), path.display());
    Ok(())
}

#[derive(Debug, Serialize)]
struct CheckpointRow {
    k: u32,
    traces: usize,
    finished: usize,
    identical: usize,
    restores: u64,
    max_replay: u64,
    mean_wasted_fraction: f64,
    mean_powered_cycles: f64,
    checkpoint_cycles: u64,
    model_cycles: u64,
}

#[derive(Debug, Serialize)]
struct TraceRow {
    trace: usize,
    finished: bool,
    identical: bool,
    restores: u64,
    cold_starts: u64,
    checkpoints: u64,
    torn_checkpoints: u64,
    max_replay: u64,
    replayed_frames: u64,
    wasted_cycles: u64,
    powered_cycles: u64,
    wasted_fraction: f64,
}

/// Runs every configured trace at checkpoint interval `k`.
fn trace_runs(cfg: &SimConfig, net: &Network, k: u32) -> anyhow::Result<(Vec<TraceRow>, String)> {
    let x = cfg.inputs(net)?.remove(0);
    let want = run_network(net, &x, &cfg.hierarchy, &cfg.cost)?.scores;
    let ic = &cfg.intermittency;
    let policy = IntermittencyPolicy {
        checkpoint_interval: k,
        nv_mode: ic.nv_mode,
        max_intervals: ic.max_intervals,
    };
    let mut rows = Vec::new();
    let mut first_journal = String::new();
    for t in 0..ic.traces {
        let trace = ic.trace(cfg.seed, t, &cfg.base_dir)?;
        let mut prog = NetworkProgram::new(net, &x, &cfg.hierarchy, &cfg.cost)?;
        let out = run_with_trace(&mut prog, &trace, &policy)?;
        let s = progress_stats(&out.journal)?;
        if t == 0 {
            first_journal = out.journal.to_jsonl();
        }
        rows.push(TraceRow {
            trace: t,
            finished: s.finished,
            identical: out.output.as_ref() == Some(&want),
            restores: s.restores,
            cold_starts: s.cold_starts,
            checkpoints: s.checkpoints,
            torn_checkpoints: s.torn_checkpoints,
            max_replay: s.max_replay_per_restore,
            replayed_frames: s.replayed_frames,
            wasted_cycles: s.wasted_cycles,
            powered_cycles: s.powered_cycles,
            wasted_fraction: s.wasted_cycle_fraction,
        });
    }
    Ok((rows, first_journal))
}

pub fn sweep_checkpoint_k(cfg: &SimConfig) -> CmdResult {
    let ks = &cfg.sweep.checkpoint_k;
    if ks.is_empty() {
        return Err(anyhow!("sweep.checkpoint_k is empty").into());
    }
    if cfg.intermittency.traces == 0 {
        return Err(anyhow!("intermittency.traces must be >= 1").into());
    }
    let (_, net) = cfg.load_model()?;
    let mut rows = Vec::new();
    for &k in ks {
        if k == 0 {
            return Err(anyhow!("checkpoint interval 0 in sweep.checkpoint_k").into());
        }
        let (runs, _) = trace_runs(cfg, &net, k)?;
        let cost = model_cost(
            &net,
            &cfg.hierarchy,
            &CostParams {
                checkpoint_interval: k,
                ..cfg.cost.clone()
            },
        )?;
        let n = runs.len() as f64;
        rows.push(CheckpointRow {
            k,
            traces: runs.len(),
            finished: runs.iter().filter(|r| r.finished).count(),
            identical: runs.iter().filter(|r| r.identical).count(),
            restores: runs.iter().map(|r| r.restores).sum(),
            max_replay: runs.iter().map(|r| r.max_replay).max().unwrap_or(0),
            mean_wasted_fraction: runs.iter().map(|r| r.wasted_fraction).sum::<f64>() / n,
            mean_powered_cycles: runs.iter().map(|r| r.powered_cycles as f64).sum::<f64>() / n,
            checkpoint_cycles: cost.phases.nv_checkpoint.cycles,
            model_cycles: cost.cycles,
        });
    }
    let path = write_rows(&cfg.output.dir, "sweep_checkpoint_k", cfg.output.format, &rows)?;
    println!("{} points, wrote {}", rows.len(), path.display());
    Ok(())
}

#[derive(Debug, Serialize)]
struct SigmaRow {
    sigma_ra: f64,
    sigma_tmr: f64,
    trials: usize,
    rate_and: f64,
    rate_or: f64,
    rate_xor: f64,
    rate_read: f64,
}

pub fn sweep_sigma(cfg: &SimConfig) -> CmdResult {
    let sigmas = &cfg.sweep.sigma_ra;
    if sigmas.is_empty() {
        return Err(anyhow!("sweep.sigma_ra is empty").into());
    }
    let trials = cfg.monte_carlo.trials;
    let mut rows = Vec::new();
    for &s in sigmas {
        let params = DeviceParams {
            sigma_ra: s,
            ..cfg.device.clone()
        };
        let r = sense_margin_mc(&params, trials, cfg.seed)?;
        rows.push(SigmaRow {
            sigma_ra: s,
            sigma_tmr: params.sigma_tmr,
            trials,
            rate_and: r.mode_rate(SenseMode::And),
            rate_or: r.mode_rate(SenseMode::Or),
            rate_xor: r.mode_rate(SenseMode::Xor),
            rate_read: r.mode_rate(SenseMode::Read),
        });
    }
    let path = write_rows(&cfg.output.dir, "sweep_sigma", cfg.output.format, &rows)?;
    println!("{} points, wrote {}", rows.len(), path.display());
    Ok(())
}

pub fn intermittent(cfg: &SimConfig) -> CmdResult {
    let (_, net) = cfg.load_model()?;
    let k = cfg.intermittency.checkpoint_k;
    let (rows, journal) = trace_runs(cfg, &net, k)?;
    let dir = &cfg.output.dir;
    let path = write_rows(dir, "intermittent", cfg.output.format, &rows)?;
    let jpath = write_text(dir, "journal.jsonl", &journal)?;

    let finished = rows.iter().filter(|r| r.finished).count();
    let identical = rows.iter().filter(|r| r.identical).count();
    let restores: u64 = rows.iter().map(|r| r.restores).sum();
    let max_replay = rows.iter().map(|r| r.max_replay).max().unwrap_or(0);
    println!(
        "{} traces: {finished} finished, {identical} identical to the uninterrupted run, {restores} restores, max replay {max_replay} frames",
        rows.len()
    );
    println!("wrote {} and {}", path.display(), jpath.display());
    if cfg.intermittency.nv_mode == NvMode::TwoFf {
        if let Some(r) = rows.iter().find(|r| r.finished && !r.identical) {
            return Err(Failure::Verification(format!("trace {} finished with a different output", r.trace)));
        }
        if max_replay > u64::from(k) {
            return Err(Failure::Verification(format!("a restore replayed {max_replay} frames, more than K = {k}")));
        }
    }
    Ok(())
}

pub fn mc_sense(cfg: &SimConfig) -> CmdResult {
    let r = sense_margin_mc(&cfg.device, cfg.monte_carlo.trials, cfg.seed)?;
    let dir = &cfg.output.dir;
    let path = match cfg.output.format {
        OutputFormat::Csv => write_text(dir, "margins.csv", &r.to_csv())?,
        OutputFormat::Json => write_json(dir, "margins", &r)?,
    };
    for m in &r.modes {
        println!("{:<5} misclassification {:.6}", m.mode.label(), m.misclass_rate);
    }
    println!("wrote {}", path.display());
    Ok(())
}

fn read_cost_rows(path: &Path) -> anyhow::Result<Vec<CostRow>> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).with_context(|| format!("{} is not a cost report", path.display()))
    } else {
        csv::Reader::from_reader(text.as_bytes())
            .deserialize()
            .collect::<Result<_, _>>()
            .with_context(|| format!("{} is not a cost report", path.display()))
    }
}

/// Plain-text table of a cost report.
pub fn render_cost_table(rows: &[CostRow]) -> String {
    let headers = ["stage", "cycles", "and", "wb", "cmp", "shift", "acc", "nv", "epu", "energy_pJ"];
    let cells: Vec<[String; 10]> = rows
        .iter()
        .map(|r| {
            [
                r.stage.clone(),
                r.cycles.to_string(),
                r.and_cycles.to_string(),
                r.write_back_cycles.to_string(),
                r.cmp_cycles.to_string(),
                r.shift_cycles.to_string(),
                r.accumulate_cycles.to_string(),
                r.nv_checkpoint_cycles.to_string(),
                r.epu_cycles.to_string(),
                format!("{:.2}", r.energy_pj),
            ]
        })
        .collect();
    let widths: Vec<usize> = (0..headers.len())
        .map(|c| cells.iter().map(|r| r[c].len()).chain([headers[c].len()]).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    let line = |out: &mut String, row: &[&str]| {
        for (c, v) in row.iter().enumerate() {
            if c == 0 {
                let _ = write!(out, "{v:<w$}", w = widths[c]);
            } else {
                let _ = write!(out, "  {v:>w$}", w = widths[c]);
            }
        }
        out.push('\n');
    };
    line(&mut out, &headers);
    let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
    line(&mut out, &rule.iter().map(String::as_str).collect::<Vec<_>>());
    for r in &cells {
        line(&mut out, &r.iter().map(String::as_str).collect::<Vec<_>>());
    }
    out
}

pub fn report(file: Option<&Path>, storage: Option<&[u32]>, full_first_last: bool) -> CmdResult {
    if file.is_none() && storage.is_none() {
        return Err(anyhow!("report needs a cost file or --storage W_BITS I_BITS").into());
    }
    if let Some(path) = file {
        let rows = read_cost_rows(path)?;
        if rows.is_empty() {
            return Err(anyhow!("{} has no rows", path.display()).into());
        }
        print!("{}", render_cost_table(&rows));
    }
    if let Some(&[w, i]) = storage {
        print!("{}", storage_footprint(&alexnet_layers(), w, i, full_first_last)?);
    }
    Ok(())
}
