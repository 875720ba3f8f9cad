use super::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const HARNESS9: &str = include_str!("../../tests/fixtures/harness9.toml");

const MIXED: &str = r#"
[[flag]]
name = "a"
kind = "boolean"
[[flag]]
name = "b"
kind = "boolean"
default = true
[[flag]]
name = "similarity"
kind = "numeric"
candidates = [0.75, 0.80, 0.85]
default = 0.80
[[flag]]
name = "c"
kind = "boolean"
[[flag]]
name = "preset"
kind = "categorical"
levels = ["lean", "balanced", "thorough"]
default = "balanced"
[[flag]]
name = "d"
kind = "boolean"
[[flag]]
name = "e"
kind = "boolean"
[[flag]]
name = "top_k"
kind = "numeric"
candidates = [1.0, 4.0]
[[flag]]
name = "f"
kind = "boolean"

[[block]]
name = "one"
flags = ["a", "b", "similarity"]
[[block]]
name = "two"
flags = ["c", "preset", "d"]
[[block]]
name = "three"
flags = ["e", "top_k", "f"]
"#;

fn booleans(n: usize) -> FlagSpace {
    let mut doc = String::new();
    for i in 0..n {
        doc += &format!("[[flag]]\nname = \"f{i}\"\nkind = \"boolean\"\n");
    }
    doc += "[[block]]\nname = \"all\"\nflags = [";
    doc += &(0..n).map(|i| format!("\"f{i}\"")).collect::<Vec<_>>().join(", ");
    doc += "]\n";
    FlagSpace::parse(&doc).unwrap()
}

#[test]
fn minimal_document() {
    let s = booleans(2);
    assert_eq!(s.len(), 2);
    assert_eq!(s.blocks().len(), 1);
}

#[test]
fn harness_document_has_nine_flags_in_six_blocks() {
    let s = FlagSpace::parse(HARNESS9).unwrap();
    assert_eq!(s.len(), 9);
    assert_eq!(s.blocks().len(), 6);
    let names: Vec<_> = s.blocks().iter().map(|b| b.name.as_str()).collect();
    assert_eq!(names, ["cache", "memory", "compaction", "trajectory", "prediction", "evaluation"]);
    assert_eq!(s.flag(s.index_of("reflexion").unwrap()).block, 1);
}

#[test]
fn flag_in_two_blocks_is_a_partition_error() {
    let doc = r#"
[[flag]]
name = "x"
kind = "boolean"
[[block]]
name = "p"
flags = ["x"]
[[block]]
name = "q"
flags = ["x"]
"#;
    match FlagSpace::parse(doc) {
        Err(Error::Partition { flag, count }) => {
            assert_eq!(flag, "x");
            assert_eq!(count, 2);
        }
        other => panic!("expected partition error, got {other:?}"),
    }
}

#[test]
fn flag_in_no_block_is_a_partition_error() {
    let doc = "[[flag]]\nname = \"x\"\nkind = \"boolean\"\n";
    assert!(matches!(FlagSpace::parse(doc), Err(Error::Partition { count: 0, .. })));
}

#[test]
fn duplicate_and_empty_domains_are_rejected() {
    let dup = "[[flag]]\nname = \"x\"\nkind = \"boolean\"\n[[flag]]\nname = \"x\"\nkind = \"boolean\"\n";
    assert!(matches!(FlagSpace::parse(dup), Err(Error::DuplicateFlag(n)) if n == "x"));

    let empty =
        "[[flag]]\nname = \"t\"\nkind = \"numeric\"\ncandidates = []\n[[block]]\nname = \"b\"\nflags = [\"t\"]\n";
    assert!(matches!(FlagSpace::parse(empty), Err(Error::EmptyDomain(n)) if n == "t"));

    let unsorted = "[[flag]]\nname = \"t\"\nkind = \"numeric\"\ncandidates = [2.0, 1.0]\n[[block]]\nname = \"b\"\nflags = [\"t\"]\n";
    assert!(matches!(FlagSpace::parse(unsorted), Err(Error::InvalidFlag { .. })));

    let one_level =
        "[[flag]]\nname = \"t\"\nkind = \"categorical\"\nlevels = [\"a\"]\n[[block]]\nname = \"b\"\nflags = [\"t\"]\n";
    assert!(matches!(FlagSpace::parse(one_level), Err(Error::InvalidFlag { .. })));
}

#[test]
fn warm_flag_without_consumer_counter_is_rejected() {
    let doc =
        "[[flag]]\nname = \"m\"\nkind = \"boolean\"\nwarm_dependent = true\n[[block]]\nname = \"b\"\nflags = [\"m\"]\n";
    assert!(matches!(FlagSpace::parse(doc), Err(Error::InvalidFlag { .. })));
}

#[test]
fn encoding_examples() {
    let s = FlagSpace::parse(MIXED).unwrap();
    let mut c = s.default_config();
    let z = s.encode(&c).unwrap();
    // a off, b on, similarity 0.80 is the midpoint, c off,
    // preset "balanced" is level 2 of 3.
    assert_eq!(&z[..4], &[-1.0, 1.0, 0.0, -1.0]);
    assert_eq!(&z[4..7], &[-1.0, 1.0, -1.0]);
    assert_eq!(z.len(), s.latent_dim());
    assert_eq!(s.latent_dim(), 11);

    c.set(0, 1);
    assert_eq!(s.encode(&c).unwrap()[0], 1.0);
    c.set(2, 2);
    assert_eq!(s.encode(&c).unwrap()[2], 1.0);
}

#[test]
fn encode_rejects_values_outside_the_domain() {
    let s = FlagSpace::parse(MIXED).unwrap();
    let mut c = s.default_config();
    c.set(2, 3);
    assert!(matches!(s.encode(&c), Err(Error::ValueOutOfDomain { flag, .. }) if flag == "similarity"));
}

#[test]
fn assignment_round_trip() {
    let s = FlagSpace::parse(MIXED).unwrap();
    let c = Configuration::from_indices(vec![1, 0, 2, 1, 0, 1, 0, 1, 1]);
    let map = s.assignment(&c);
    assert_eq!(map["similarity"], FlagValue::Number(0.85));
    assert_eq!(map["preset"], FlagValue::Level("lean".into()));
    assert_eq!(s.configuration(&map).unwrap(), c);

    let mut bad = map.clone();
    bad.insert("similarity".into(), FlagValue::Number(0.9));
    assert!(s.configuration(&bad).is_err());
}

#[test]
fn sobol_single_boolean_is_exhaustive() {
    let s = booleans(1);
    let design = s.sobol_init(2, 0).unwrap();
    assert!(design.exhaustive);
    let set: BTreeSet<_> = design.configs.iter().map(|c| c.get(0)).collect();
    assert_eq!(set, BTreeSet::from([0, 1]));
}

#[test]
fn sobol_design_is_balanced_and_distinct() {
    let s = booleans(8);
    for seed in 0..20 {
        let design = s.sobol_init(32, seed).unwrap();
        assert!(!design.exhaustive);
        let distinct: HashSet<_> = design.configs.iter().collect();
        assert_eq!(distinct.len(), 32);
        for f in 0..8 {
            let on = design.configs.iter().filter(|c| c.get(f) == 1).count();
            assert!((8..=24).contains(&on), "seed {seed} flag {f}: {on} of 32 on");
        }
    }
}

#[test]
fn sobol_is_deterministic_and_seed_sensitive() {
    let s = FlagSpace::parse(HARNESS9).unwrap();
    let a = s.sobol_init(32, 11).unwrap();
    let b = s.sobol_init(32, 11).unwrap();
    let c = s.sobol_init(32, 12).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn sobol_respects_pins() {
    let mut s = FlagSpace::parse(HARNESS9).unwrap();
    s.exclude(3, 0, ExclusionReason::Silent);
    let design = s.sobol_init(40, 5).unwrap();
    assert!(design.configs.iter().all(|c| c.get(3) == 0));
    let distinct: HashSet<_> = design.configs.iter().collect();
    assert_eq!(distinct.len(), 40);
}

#[test]
fn hamming_neighbor_counts() {
    let s = booleans(3);
    let c = s.default_config();
    assert!(s.hamming_neighbors(&c, 0).is_empty());
    assert_eq!(s.hamming_neighbors(&c, 1).len(), 3);
    assert_eq!(s.hamming_neighbors(&c, 3).len(), 7);
}

#[test]
fn hamming_neighbors_match_brute_force_on_mixed_space() {
    let s = FlagSpace::parse(MIXED).unwrap();
    let all = s.enumerate();
    assert_eq!(all.len(), 2 * 2 * 3 * 2 * 3 * 2 * 2 * 2 * 2);
    for center in [s.default_config(), all[17].clone(), all[all.len() - 1].clone()] {
        let brute: BTreeSet<_> = all.iter().filter(|c| (1..=2).contains(&c.hamming(&center))).cloned().collect();
        assert_eq!(s.hamming_neighbors(&center, 2), brute);
    }
}

#[test]
fn excluded_flags_are_never_varied() {
    let mut s = FlagSpace::parse(MIXED).unwrap();
    s.exclude(4, 1, ExclusionReason::Frozen);
    let c = s.pin(&s.default_config());
    for n in s.hamming_neighbors(&c, 3) {
        assert_eq!(n.get(4), 1);
    }
    assert_eq!(s.ball_size(1) as usize, 1 + s.hamming_neighbors(&c, 1).len());
}

#[test]
fn ball_sampling_stays_inside_and_is_distinct() {
    let s = booleans(12);
    let c = s.default_config();
    assert_eq!(s.ball_size(3), (1 + 12 + 66 + 220) as f64);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let pool = s.sample_ball(&c, 3, 100, &mut rng);
    assert_eq!(pool.len(), 100);
    assert!(pool.iter().all(|p| p.hamming(&c) <= 3));
    let distinct: HashSet<_> = pool.iter().collect();
    assert_eq!(distinct.len(), 100);

    // Small balls come back whole.
    let whole = s.sample_ball(&c, 1, 100, &mut rng);
    assert_eq!(whole.len(), 13);
}

#[test]
fn ball_sampling_is_roughly_uniform_over_shells() {
    // Radius 2 on 10 booleans: shells of size 1, 10, 45.
    let s = booleans(10);
    let c = s.default_config();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut at_two = 0;
    let trials = 400;
    for _ in 0..trials {
        let p = s.sample_ball(&c, 2, 1, &mut rng);
        if p[0].hamming(&c) == 2 {
            at_two += 1;
        }
    }
    let frac = at_two as f64 / trials as f64;
    assert!((frac - 45.0 / 56.0).abs() < 0.08, "shell-2 fraction {frac}");
}

fn mixed_config() -> impl Strategy<Value = Configuration> {
    (0u32..2, 0u32..2, 0u32..3, 0u32..2, 0u32..3, 0u32..2, 0u32..2, 0u32..2, 0u32..2)
        .prop_map(|(a, b, c, d, e, f, g, h, i)| Configuration::from_indices(vec![a, b, c, d, e, f, g, h, i]))
}

proptest! {
    #[test]
    fn encode_is_injective_and_decodes_back(x in mixed_config(), y in mixed_config()) {
        let s = FlagSpace::parse(MIXED).unwrap();
        let zx = s.encode(&x).unwrap();
        let zy = s.encode(&y).unwrap();
        prop_assert_eq!(x == y, zx == zy);
        prop_assert_eq!(s.decode(&zx).unwrap(), x);
    }

    #[test]
    fn hamming_is_a_metric(x in mixed_config(), y in mixed_config(), z in mixed_config()) {
        prop_assert_eq!(x.hamming(&y), y.hamming(&x));
        prop_assert_eq!(x.hamming(&y) == 0, x == y);
        prop_assert!(x.hamming(&z) <= x.hamming(&y) + y.hamming(&z));
    }

    #[test]
    fn sobol_is_pure(seed in 0u64..1000, count in 1usize..40) {
        let s = FlagSpace::parse(MIXED).unwrap();
        prop_assert_eq!(s.sobol_init(count, seed).unwrap(), s.sobol_init(count, seed).unwrap());
    }
}
