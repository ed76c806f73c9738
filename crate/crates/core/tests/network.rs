use std::path::Path;

use pimcnn::config::{random_inputs, ModelConfig};
use pimcnn::costmodel::CostParams;
use pimcnn::engine::{run_network, MemoryHierarchy, NetworkProgram};
use pimcnn::intermittency::{progress_stats, run_with_trace, IntermittencyPolicy, PowerTrace};
use pimcnn::oracle::network_oracle;
use pimcnn::Error;

const NET: &str = r#"
name = "mixed"
input_shape = [3, 9, 9]

[[layers]]
kind = "conv"
out_channels = 5
kernel = [3, 3]
stride = 2
padding = 1
weight_bits = 4
input_bits = 8
activation = "half_tanh"
bn = { mean = 20.0, var = 30.0, gamma = 1.5, beta = -0.2 }

[[layers]]
kind = "conv"
out_channels = 6
kernel = [2, 2]
weight_bits = 1
input_bits = 2
activation = "sign"

[[layers]]
kind = "avgpool"
window = 2
stride = 1

[[layers]]
kind = "fc"
out_features = 4
weight_bits = 2
input_bits = 1
activation = "half_tanh"

[[layers]]
kind = "fc"
out_features = 3
quantize = false
"#;

#[test]
fn engine_matches_oracle_on_random_inputs() {
    let net = ModelConfig::parse(NET).unwrap().build(Path::new("."), 3).unwrap();
    let hier = MemoryHierarchy::default();
    let cost = CostParams::default();
    for x in random_inputs(net.input_shape(), 100, 21) {
        let run = run_network(&net, &x, &hier, &cost).unwrap();
        let stages = network_oracle(&net, &x).unwrap();
        assert_eq!(stages.len(), run.stages.len());
        for (got, want) in run.stages.iter().zip(&stages) {
            assert_eq!(&got.output, want, "stage {}", got.name);
        }
        assert_eq!(&run.scores, stages.last().unwrap());
    }
}

#[test]
fn runs_are_deterministic() {
    let build = || ModelConfig::parse(NET).unwrap().build(Path::new("."), 3).unwrap();
    let (a, b) = (build(), build());
    let x = random_inputs(a.input_shape(), 1, 4).remove(0);
    let hier = MemoryHierarchy::default();
    let cost = CostParams::default();
    assert_eq!(run_network(&a, &x, &hier, &cost).unwrap(), run_network(&b, &x, &hier, &cost).unwrap());
    let policy = IntermittencyPolicy { checkpoint_interval: 3, ..Default::default() };
    let trace = PowerTrace::exponential(8, 400.0, 50.0).unwrap();
    let j1 = run_with_trace(&mut NetworkProgram::new(&a, &x, &hier, &cost).unwrap(), &trace, &policy).unwrap();
    let j2 = run_with_trace(&mut NetworkProgram::new(&b, &x, &hier, &cost).unwrap(), &trace, &policy).unwrap();
    assert_eq!(j1.journal, j2.journal);
    assert_eq!(j1.output, j2.output);
}

#[test]
fn intermittent_mixed_network_matches() {
    let net = ModelConfig::parse(NET).unwrap().build(Path::new("."), 3).unwrap();
    let hier = MemoryHierarchy::default();
    let cost = CostParams::default();
    let x = random_inputs(net.input_shape(), 1, 6).remove(0);
    let want = run_network(&net, &x, &hier, &cost).unwrap().scores;
    for k in [1, 2, 7] {
        let policy = IntermittencyPolicy { checkpoint_interval: k, ..Default::default() };
        for seed in 0..5 {
            let trace = PowerTrace::exponential(seed, 500.0, 20.0).unwrap();
            let out = run_with_trace(&mut NetworkProgram::new(&net, &x, &hier, &cost).unwrap(), &trace, &policy).unwrap();
            let stats = progress_stats(&out.journal).unwrap();
            assert!(stats.finished);
            assert!(stats.max_replay_per_restore <= u64::from(k));
            assert_eq!(out.output.as_ref(), Some(&want));
        }
    }
}

#[test]
fn bad_input_shape_is_rejected() {
    let net = ModelConfig::parse(NET).unwrap().build(Path::new("."), 3).unwrap();
    let x = random_inputs([3, 8, 8], 1, 0).remove(0);
    let err = run_network(&net, &x, &MemoryHierarchy::default(), &CostParams::default()).unwrap_err();
    assert!(matches!(err, Error::Shape(_)));
}
