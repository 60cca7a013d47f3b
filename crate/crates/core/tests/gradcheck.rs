use bayrel::gradcheck::{run, GradcheckOptions, MAX_RELATIVE_ERROR};
use bayrel::model::LinkKind;

#[test]
fn analytic_gradients_match_finite_differences() {
    let report = run(&GradcheckOptions::default()).unwrap();
    assert!(report.passed(), "{report}");
    assert!(report.max_rel_error() <= MAX_RELATIVE_ERROR);
    for link in [LinkKind::InnerProduct, LinkKind::BernoulliPoisson] {
        assert!(report.params.iter().any(|p| p.link == link));
    }
    assert!(report.params.iter().any(|p| p.link == LinkKind::BernoulliPoisson && p.name.contains("tau")));
}

#[test]
fn corrupted_gradient_is_detected() {
    let clean = run(&GradcheckOptions { links: vec![LinkKind::InnerProduct], ..Default::default() }).unwrap();
    let name = clean.params[0].name.clone();
    let options = GradcheckOptions {
        links: vec![LinkKind::InnerProduct],
        corrupt: Some((name.clone(), 0.5)),
        ..Default::default()
    };
    let report = run(&options).unwrap();
    assert!(!report.passed());
    let failed: Vec<_> = report.params.iter().filter(|p| !p.passed).collect();
    assert_eq!(failed.len(), 1);
    assert_eq!(failed[0].name, name);
}
