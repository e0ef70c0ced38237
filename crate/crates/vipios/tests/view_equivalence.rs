mod common;

use std::sync::atomic::{AtomicU32, Ordering};

use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig { cases: 1000, max_global_rejects: 100_000, ..ProptestConfig::default() })]

    #[test]
    fn reads_and_writes_through_views_match_the_model(case in common::arb_view_case()) {
        thread_local! {
            static CLUSTER: (tempfile::TempDir, vipios::cluster::Cluster) = common::view_cluster();
        }
        static N: AtomicU32 = AtomicU32::new(0);
        let name = format!("case{}", N.fetch_add(1, Ordering::Relaxed));
        let r = CLUSTER.with(|(_, c)| {
            let mut s = c.session().unwrap();
            common::check_view_case(&mut s, &name, &case)
        });
        prop_assert!(r.is_ok(), "{}", r.unwrap_err());
    }
}
