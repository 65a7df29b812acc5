use sgtb::crf::{nll_loss, ZSource, DEFAULT_ENUMERATION_CAP};
use sgtb::data::Dataset;
use sgtb::ensemble::BoostedEnsemble;
use sgtb::search::{SearchConfig, Strategy};
use sgtb::synthetic::{generate, SynthConfig};
use sgtb::trainer::{train, TrainConfig, Trainer};

fn exact_nll(ens: &BoostedEnsemble, data: &Dataset) -> f64 {
    let scorer = ens.scorer(&data.pairwise);
    data.documents
        .iter()
        .map(|d| {
            nll_loss(
                &scorer,
                d,
                ZSource::Exact {
                    cap: DEFAULT_ENUMERATION_CAP,
                },
            )
            .unwrap()
        })
        .sum()
}

/// With a beam that holds every sequence, the beam normalizer is exact and
/// each epoch is a functional gradient step on the true loss.
#[test]
fn exact_regime_loss_mostly_descends() {
    let mut pairs = 0usize;
    let mut descents = 0usize;
    for (seed, local_signal, coherence, future) in [(1, 0.6, 2.0, false), (2, 1.0, 0.0, false), (3, 0.8, 1.5, true)] {
        let c = generate(&SynthConfig {
            n_train: 30,
            n_dev: 5,
            n_test: 0,
            mentions: 3,
            candidates: 3,
            local_signal,
            coherence_strength: coherence,
            future_informative: future,
            seed,
            ..Default::default()
        })
        .unwrap();
        let config = TrainConfig {
            max_epochs: 25,
            eval_every: 25,
            search: SearchConfig::new(Strategy::Bsg, 27),
            eta: 1.0,
            seed,
            ..Default::default()
        };
        let mut trainer = Trainer::new(&c.train, config).unwrap();
        let mut prev = exact_nll(trainer.ensemble(), &c.train);
        for _ in 0..config.max_epochs {
            trainer.step().unwrap();
            let now = exact_nll(trainer.ensemble(), &c.train);
            pairs += 1;
            descents += usize::from(now <= prev + 1e-9 * prev.abs());
            prev = now;
        }
    }
    assert!(
        descents as f64 >= 0.95 * pairs as f64,
        "{descents}/{pairs} non-increasing"
    );
}

#[test]
fn reports_do_not_depend_on_worker_count() {
    let c = generate(&SynthConfig {
        n_train: 40,
        n_dev: 10,
        n_test: 0,
        mentions: 4,
        candidates: 3,
        seed: 4,
        ..Default::default()
    })
    .unwrap();
    let run = |workers| {
        let config = TrainConfig {
            max_epochs: 6,
            eval_every: 2,
            search: SearchConfig::new(Strategy::EarlyUpdate, 2),
            workers,
            seed: 4,
            ..Default::default()
        };
        train(&c.train, &c.dev, &config).unwrap()
    };
    let (e1, r1) = run(1);
    let (e3, r3) = run(3);
    assert_eq!(e1, e3);
    assert_eq!(r1.best_epoch, r3.best_epoch);
    for (a, b) in r1.epochs.iter().zip(&r3.epochs) {
        assert_eq!(
            (a.train_nll.to_bits(), a.dev_accuracy, a.points),
            (b.train_nll.to_bits(), b.dev_accuracy, b.points)
        );
    }
    assert_eq!(e1.len(), r1.best_epoch);
}
