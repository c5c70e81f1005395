use grouplm_core::graph::compute_intersections;
use grouplm_core::similarity::{build_similarity_matrix, Metric};
use grouplm_core::synth::{generate_corpus, generate_network, group_id, SynthSpec};

#[test]
fn word_frequencies_follow_topic_distributions() {
    let spec = SynthSpec {
        num_users: 600,
        vocab_size: 200,
        docs_per_group: 1000,
        doc_length: 32,
        seed: 5,
        ..SynthSpec::default()
    };
    let graph = generate_network(&spec).unwrap();
    let corpus = generate_corpus(&graph, &spec).unwrap();
    let dists = spec.topic_distributions();
    let mut counts = vec![vec![0usize; spec.vocab_size]; spec.num_topics];
    for d in &corpus.documents {
        let g = (0..spec.num_groups)
            .find(|&g| group_id(g) == d.group_id)
            .unwrap();
        for &t in &d.tokens {
            counts[spec.topic_of_group(g)][t as usize] += 1;
        }
    }
    for (topic, row) in counts.iter().enumerate() {
        let total: usize = row.iter().sum();
        let tv: f64 = 0.5
            * row
                .iter()
                .zip(&dists[topic])
                .map(|(&c, &p)| (c as f64 / total as f64 - p).abs())
                .sum::<f64>();
        assert!(tv <= 0.02, "topic {topic}: TV {tv:.4} over {total} tokens");
    }
}

#[test]
fn groups_of_a_topic_share_more_subscribers() {
    for seed in 0..5 {
        let spec = SynthSpec {
            seed,
            ..SynthSpec::default()
        };
        let graph = generate_network(&spec).unwrap();
        let sim = build_similarity_matrix(&graph, &compute_intersections(&graph), Metric::Jaccard)
            .unwrap();
        let (mut intra, mut inter) = (Vec::new(), Vec::new());
        for a in 0..spec.num_groups {
            for b in a + 1..spec.num_groups {
                let v = sim.get(
                    graph.group_index(&group_id(a)).unwrap(),
                    graph.group_index(&group_id(b)).unwrap(),
                );
                if spec.topic_of_group(a) == spec.topic_of_group(b) {
                    intra.push(v);
                } else {
                    inter.push(v);
                }
            }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!(
            mean(&intra) > mean(&inter),
            "seed {seed}: {} vs {}",
            mean(&intra),
            mean(&inter)
        );
    }
}

#[test]
fn entropy_floor_is_between_zero_and_uniform() {
    let spec = SynthSpec::default();
    let floor = spec.entropy_floor();
    assert!(floor > 0.0 && floor < (spec.vocab_size as f64).log2());
    let flat = SynthSpec {
        zipf_exponent: 0.0,
        alpha: 1.0,
        ..SynthSpec::default()
    };
    let words = (flat.vocab_size - 4) as f64;
    assert!((flat.entropy_floor() - words.log2()).abs() < 1e-9);
}
