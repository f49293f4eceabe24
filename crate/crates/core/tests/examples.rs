// Every example doubles as a smoke test.

macro_rules! example {
    ($name:ident) => {
        mod $name {
            include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/", stringify!($name), ".rs"));
        }

        #[test]
        fn $name() {
            $name::run().expect("example should run");
        }
    };
}

example!(coherence_sweep);
example!(correlations);
example!(visibility_map);
example!(monte_carlo);
example!(fitting);
