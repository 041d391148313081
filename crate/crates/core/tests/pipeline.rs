use fpsim::accountant::{zcdp, ParticipationSchema};
use fpsim::harness::{self, checkpoint, ExperimentConfig};
use fpsim::tree::RestartSchedule;

fn config(extra: &str) -> ExperimentConfig {
    ExperimentConfig::parse(&format!(
        "rounds = 30\neval_every = 10\ncohort.population = 120\ncohort.report_goal = 10\n\
         model.vocab = 12\ndata.eval_clients = 10\ndata.examples_per_client = 12\n{extra}"
    ))
    .unwrap()
}

#[test]
fn fine_quantization_matches_plain_aggregation() {
    let root = tempfile::tempdir().unwrap();
    let plain = harness::run(&config("clip.norm = 0.5"), &root.path().join("plain")).unwrap();
    let quantized =
        harness::run(&config("clip.norm = 0.5\nsecagg.enabled = true\nsecagg.scale = 1e6"), &root.path().join("q"))
            .unwrap();
    let diff = plain.final_params.diff(&quantized.final_params).norm_l2();
    assert!(diff < 1e-3, "{diff}");
    assert!(quantized.metrics.iter().all(|m| m.bits_per_update.is_some()));
    assert!(plain.metrics.iter().all(|m| m.bits_per_update.is_none()));
}

#[test]
fn timer_bounds_observed_separation() {
    let root = tempfile::tempdir().unwrap();
    for (timer, availability) in [(3u64, "uniform"), (7, "diurnal")] {
        let cfg = config(&format!(
            "cohort.timer_rounds = {timer}\ncohort.availability = {availability}\ndp.noise_multiplier = 1\nclip.norm = 0.5"
        ));
        let dir = root.path().join(availability);
        let out = harness::run(&cfg, &dir).unwrap();
        let logs = harness::read_participation(&dir.join("participation.csv")).unwrap();
        let mut total = 0;
        for rounds in &logs {
            total += rounds.len();
            assert!(rounds.windows(2).all(|w| w[1] - w[0] >= timer), "{rounds:?}");
        }
        assert_eq!(total, 30 * 10);
        assert!(out.report.min_separation >= timer);
        assert!(out.report.max_participations <= 30u64.div_ceil(timer));
    }
}

#[test]
fn report_agrees_with_the_accountant() {
    let root = tempfile::tempdir().unwrap();
    let cfg = config("cohort.timer_rounds = 4\ndp.noise_multiplier = 1.5\nclip.norm = 0.5\ndp.restarts = 12");
    let out = harness::run(&cfg, &root.path().join("r")).unwrap();
    let r = &out.report;
    let schema = ParticipationSchema::new(30, r.min_separation, r.max_participations, RestartSchedule::new(vec![12]).unwrap())
        .unwrap();
    assert_eq!(r.rho, zcdp(1.5, &schema).unwrap());
    // The per-round column is the worst case, so it bounds the observed value.
    let last = out.metrics.last().unwrap().cumulative_zcdp;
    assert!(last >= r.rho, "{last} < {}", r.rho);
    assert!(out.metrics.windows(2).all(|w| w[1].cumulative_zcdp >= w[0].cumulative_zcdp));

    let recomputed = harness::account_run(&out.dir).unwrap();
    assert_eq!(&recomputed, r);
}

#[test]
fn comparing_a_run_with_itself_shows_no_difference() {
    let root = tempfile::tempdir().unwrap();
    let dir = root.path().join("self");
    harness::run(&config("dp.noise_multiplier = 0.3\nclip.norm = 0.5"), &dir).unwrap();
    let cmp = harness::compare(&dir, &dir, None).unwrap();
    assert_eq!(cmp.accuracy_gap(), Some(0.0));
    assert!(cmp.within_band(0.0));
    assert_eq!(cmp.a, cmp.b);
}

#[test]
fn warm_start_loads_the_checkpoint() {
    let root = tempfile::tempdir().unwrap();
    let public = root.path().join("public");
    let first = harness::run(&config("clip.norm = 0.5\ndata.population_seed = 77"), &public).unwrap();
    let ckpt = public.join("checkpoint.bin");
    assert_eq!(checkpoint::read(&ckpt).unwrap(), first.final_params);

    let mut warm = config(&format!("clip.norm = 0.5\nwarm_start = {}", ckpt.display()));
    let mut cold = config("clip.norm = 0.5");
    warm.rounds = 1;
    cold.rounds = 1;
    let w = harness::run(&warm, &root.path().join("w")).unwrap();
    let c = harness::run(&cold, &root.path().join("c")).unwrap();
    // One round from the public model stays far closer to it than a fresh start does.
    assert!(w.final_params.diff(&first.final_params).norm_l2() < c.final_params.diff(&first.final_params).norm_l2());
}
