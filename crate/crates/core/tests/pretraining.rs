use depvec::gnn::{Arch, Model, ModelConfig};
use depvec::lexical::train_bpe;
use depvec::mir::{parse_records, Program};
use depvec::pretrain::{pretrain, PretrainConfig, Strategy};
use depvec::tasks::generate_desk_corpora;

fn corpus() -> Vec<Program> {
    let c = generate_desk_corpora(0);
    parse_records(&c.pretrain).unwrap().into_iter().map(|r| r.program).collect()
}

fn small_model(programs: &[Program], arch: Arch) -> Model {
    let texts: Vec<&str> = programs
        .iter()
        .flat_map(|p| p.methods.iter().flat_map(|m| m.instructions.iter().map(|i| i.text.as_str())))
        .collect();
    let config = ModelConfig {
        embed_dim: 16,
        lstm_hidden: 8,
        arch,
        layers: 3,
        dropout: 0.2,
        readout_width: 16,
    };
    Model::random(config, train_bpe(&texts, 200).unwrap(), 0).unwrap()
}

#[test]
fn every_objective_ends_below_its_first_epoch() {
    let programs = corpus();
    assert_eq!(programs.len(), 50);
    for strategy in [Strategy::Node, Strategy::Context, Strategy::Vgae] {
        let mut model = small_model(&programs, Arch::Gat);
        let cfg = PretrainConfig {
            strategy,
            epochs: 3,
            seed: 0,
            ..PretrainConfig::default()
        };
        let report = pretrain(&programs, &mut model, &cfg).unwrap();
        let losses = &report.epoch_losses;
        assert!(losses.last().unwrap() < &losses[0], "{strategy}: {losses:?}");
    }
}

#[test]
fn gin_context_loss_stays_bounded() {
    let programs = corpus();
    let mut model = small_model(&programs, Arch::Gin);
    let cfg = PretrainConfig {
        strategy: Strategy::Context,
        epochs: 2,
        ..PretrainConfig::default()
    };
    let report = pretrain(&programs, &mut model, &cfg).unwrap();
    assert!(report.epoch_losses.iter().all(|l| l.is_finite() && *l < 50.0), "{:?}", report.epoch_losses);
}
