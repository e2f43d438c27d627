use mixerkit::harness::{cmd_verify, CheckKind, Command, RunConfig};
use mixerkit::{CheckRecord, CheckStatus, Family, VerificationReport};
use proptest::prelude::*;

#[test]
fn verify_report_survives_json() {
    let mut cfg = RunConfig::new(Command::Verify);
    cfg.family = Some(Family::Semiseparable);
    cfg.check = CheckKind::Oracle;
    cfg.instances = 2;
    let r = cmd_verify(&cfg).unwrap();
    assert!(r.pass);
    assert_eq!(VerificationReport::from_json(&r.to_json().unwrap()).unwrap(), r);
}

proptest! {
    #[test]
    fn at_most_status_and_max_error(vals in prop::collection::vec((0.0f64..2.0, 0.0f64..2.0), 1..12)) {
        let mut r = VerificationReport::new("p");
        for (i, &(m, t)) in vals.iter().enumerate() {
            let c = CheckRecord::at_most(format!("c{i}"), m, t);
            prop_assert_eq!(c.status == CheckStatus::Pass, m <= t);
            r.push(c);
        }
        prop_assert_eq!(r.pass, vals.iter().all(|(m, t)| m <= t));
        prop_assert_eq!(r.max_error, vals.iter().map(|v| v.0).fold(0.0, f64::max));
        // Counted figures never enter the error aggregate.
        r.push(CheckRecord::at_most("rank", 99.0, 100.0).counting());
        prop_assert!(r.max_error < 99.0);
    }
}
