//! Builds and runs every example so they stay in step with the library.

macro_rules! example {
    ($name:ident, $path:literal) => {
        #[allow(dead_code)]
        mod $name {
            include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/", $path));

            #[test]
            fn runs() {
                run_example().unwrap();
            }
        }
    };
}

example!(dead_reckoning, "dead_reckoning.rs");
example!(acoustic_channel, "acoustic_channel.rs");
example!(gp_residual, "gp_residual.rs");
example!(state_buffer, "state_buffer.rs");
example!(delayed_fusion, "delayed_fusion.rs");
example!(baselines, "baselines.rs");
example!(monte_carlo, "monte_carlo.rs");
example!(oracle_suite, "oracle_suite.rs");
example!(experiment_config, "experiment_config.rs");
