//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

mod common;

use std::time::{Duration, Instant};

use authorship_core::classifier::{classify_direct, classify_family, fuzzy_knn_classify, FamilyClass, KnnConfig};
use authorship_core::corpus::{AuthorClass, CorpusDataset, FamilyTable, LabelCodes, Source, Split};
use authorship_core::encoder::{BaseEmbedding, EmbeddingSet, HashEncoder};
use authorship_core::eval::{evaluate, ordering_diagnostic, LabelMetrics, OrderingReport};
use authorship_core::index::{IndexEntry, VectorIndex};
use authorship_core::loss::{level_loss_from_similarities, loss_gradients, mcl_loss, total_loss, LossConfig};
use authorship_core::model::{init_params, project, EmbeddingVector, ModelDims, ModelParams};
use authorship_core::pipeline::{corpus_embeddings, corpus_entries, BaseEncoder};
use authorship_core::synth::{generate_corpus, SynthConfig, FAMILY_NAMES};
use authorship_core::trainer::{train, TrainConfig, TrainData};
use common::{brute_force_mcl, random_unit, random_who, rel_err, Who};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn secs(d: Duration) -> String {
    format!("{:.1} s", d.as_secs_f64())
}

fn loss_oracle() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cfg = LossConfig::default();
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let n = rng.gen_range(8..=64);
        let who: Vec<Who> = (0..n).map(|_| random_who(&mut rng, 3)).collect();
        let emb: Vec<Vec<f64>> = (0..n).map(|_| random_unit(&mut rng, 16)).collect();
        let codes: Vec<LabelCodes> = who.iter().map(|w| w.codes()).collect();
        let got = mcl_loss(&emb, &codes, &cfg).unwrap().total;
        let want = brute_force_mcl(&emb, &who, cfg.tau, cfg.coefficients());
        worst = worst.max(rel_err(got, want, 1e-300));
    }
    let t = start.elapsed();
    verdict(worst <= 1e-6 && t.as_secs() < 30, format!("max rel err {worst:.2e} over 200 batches, {}", secs(t)))
}

fn gradient_check() -> Verdict {
    const STEP: f64 = 1e-4;
    // entries whose analytic and numeric values are both below this are compared absolutely
    const FLOOR: f64 = 1e-3;
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let cfg = LossConfig::default();
    let dims = ModelDims::new(32, 8, 8);
    let mut worst = 0.0f64;
    for inst in 0..20 {
        let mut params = init_params(dims, 100 + inst).unwrap();
        for a in [&mut params.b1, &mut params.b2] {
            a.iter_mut().for_each(|v| *v = rng.gen_range(-0.3..0.3));
        }
        params.bc = rng.gen_range(-0.5..0.5);
        let bases: Vec<BaseEmbedding> = (0..12)
            .map(|i| {
                let dense: Vec<f32> =
                    (0..32).map(|_| if rng.gen_bool(0.4) { rng.gen_range(-1.0f32..1.0) } else { 0.0 }).collect();
                BaseEmbedding::from_dense(format!("b{i}"), &dense).unwrap()
            })
            .collect();
        let codes: Vec<LabelCodes> = (0..12).map(|_| random_who(&mut rng, 2).codes()).collect();
        let batch: Vec<&BaseEmbedding> = bases.iter().collect();
        let (_, grads) = loss_gradients(&batch, &codes, &params, &cfg).unwrap();
        let f = |p: &ModelParams| total_loss(&batch, &codes, p, &cfg).unwrap().total;
        let analytic: Vec<f64> = grads.arrays().iter().flat_map(|a| a.iter().copied()).collect();
        let mut pos = 0;
        for arr in 0..6 {
            let len = params.arrays()[arr].len();
            for k in 0..len {
                let mut hi = params.clone();
                hi.arrays_mut()[arr][k] += STEP;
                let mut lo = params.clone();
                lo.arrays_mut()[arr][k] -= STEP;
                let numeric = (f(&hi) - f(&lo)) / (2.0 * STEP);
                worst = worst.max(rel_err(analytic[pos], numeric, FLOOR));
                pos += 1;
            }
        }
    }
    let t = start.elapsed();
    verdict(worst < 1e-4 && t.as_secs() < 60, format!("max rel err {worst:.2e} over 20 instances, {}", secs(t)))
}

fn analytic_values() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut zero_ok, mut worst) = (true, 0.0f64);
    for _ in 0..100 {
        let s = rng.gen_range(-1.0..=1.0);
        let tau = rng.gen_range(0.01..5.0);
        zero_ok &= level_loss_from_similarities(&[s], &[], tau).unwrap() == 0.0;
        let l = level_loss_from_similarities(&[s], &[s], tau).unwrap();
        worst = worst.max((l - std::f64::consts::LN_2).abs());
    }
    verdict(zero_ok && worst <= 1e-9, format!("empty negatives give 0: {zero_ok}; max |L - ln 2| {worst:.2e}"))
}

/// Vectors with sixteen `±1/4` entries, so every similarity is exact in f32
/// and ties are frequent.
fn dyadic_vector(rng: &mut ChaCha8Rng, d: usize) -> Vec<f32> {
    let mut v = vec![0.0f32; d];
    for i in rand::seq::index::sample(rng, d, 16) {
        v[i] = if rng.gen_bool(0.5) { 0.25 } else { -0.25 };
    }
    v
}

fn knn_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut order_ok, mut worst_sim, mut worst_m) = (true, 0.0f64, 0.0f64);
    for case in 0..100 {
        let dyadic = case % 2 == 0;
        let d = rng.gen_range(16..=64);
        let n = rng.gen_range(1..=500);
        let vec_of = |rng: &mut ChaCha8Rng| -> Vec<f32> {
            if dyadic {
                dyadic_vector(rng, d)
            } else {
                random_unit(rng, d).into_iter().map(|x| x as f32).collect()
            }
        };
        let entries: Vec<IndexEntry> = (0..n)
            .map(|i| IndexEntry::new(format!("id{:04}", (i * 7919) % 10007), vec_of(&mut rng), random_who(&mut rng, 3).codes()))
            .collect();
        let index = VectorIndex::build(entries.clone()).unwrap();
        let q: Vec<f32> = vec_of(&mut rng);
        let k = rng.gen_range(1..=40);
        let tau = rng.gen_range(0.05..2.0);

        let mut oracle: Vec<(f64, &IndexEntry)> = entries
            .iter()
            .map(|e| (e.vector.iter().zip(&q).map(|(a, b)| *a as f64 * *b as f64).sum::<f64>(), e))
            .collect();
        oracle.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then_with(|| a.1.id.cmp(&b.1.id)));
        oracle.truncate(k);

        let hits = index.top_k(&q, k).unwrap();
        order_ok &= hits.len() == oracle.len() && hits.iter().zip(&oracle).all(|(h, o)| h.id == o.1.id);
        for (h, o) in hits.iter().zip(&oracle) {
            worst_sim = worst_sim.max((h.similarity - o.0).abs());
        }

        let query = EmbeddingVector::normalized(q.iter().map(|&x| x as f64).collect()).unwrap();
        let vote = fuzzy_knn_classify(&index, &query, &KnnConfig { k, tau }).unwrap();
        let z: f64 = vote.neighbors.iter().map(|nb| (nb.similarity / tau).exp()).sum();
        for class in AuthorClass::ALL {
            let want: f64 = vote
                .neighbors
                .iter()
                .filter(|nb| nb.codes.class() == class)
                .map(|nb| (nb.similarity / tau).exp() / z)
                .sum();
            worst_m = worst_m.max((vote.memberships[&class] - want).abs());
        }
        let ids: Vec<&str> = vote.neighbors.iter().map(|nb| nb.id.as_str()).collect();
        order_ok &= ids == hits.iter().map(|h| h.id).collect::<Vec<_>>();
    }
    verdict(
        order_ok && worst_m <= 1e-9,
        format!("ids and order match: {order_ok}; max |Δsim| {worst_sim:.1e}; max |Δmembership| {worst_m:.1e}"),
    )
}

fn latency() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let entries: Vec<IndexEntry> = (0..100_000)
        .map(|i| {
            let v = random_unit(&mut rng, 128).into_iter().map(|x| x as f32).collect();
            IndexEntry::new(format!("v{i:06}"), v, LabelCodes::human())
        })
        .collect();
    let index = VectorIndex::build(entries).unwrap();
    let queries: Vec<Vec<f32>> =
        (0..101).map(|_| random_unit(&mut rng, 128).into_iter().map(|x| x as f32).collect()).collect();
    index.top_k(&queries[0], 20).unwrap();
    let mut times: Vec<f64> = queries
        .iter()
        .map(|q| {
            let t = Instant::now();
            let hits = index.top_k(q, 20).unwrap();
            std::hint::black_box(hits);
            t.elapsed().as_secs_f64() * 1e3
        })
        .collect();
    times.sort_by(f64::total_cmp);
    let median = times[times.len() / 2];
    verdict(median < 10.0, format!("median top-20 query over 100k x 128: {median:.2} ms"))
}

fn determinism_and_round_trips() -> Verdict {
    let mut notes = Vec::new();
    let mut ok = true;
    let mut check = |name: &str, cond: bool| {
        ok &= cond;
        if !cond {
            notes.push(name.to_string());
        }
    };

    let cfg = SynthConfig { docs_per_class: 40, ..Default::default() };
    let bytes = |ds: &CorpusDataset| {
        let mut out = Vec::new();
        ds.write(&mut out).unwrap();
        out
    };
    let a = generate_corpus(&cfg).unwrap();
    check("synth", bytes(&a) == bytes(&generate_corpus(&cfg).unwrap()));
    let back = CorpusDataset::parse(&bytes(&a)[..]).unwrap();
    check("corpus", back == a && bytes(&back) == bytes(&a));

    let enc = HashEncoder { dim: 1024, ..Default::default() };
    let mut set = EmbeddingSet::new(enc.dim);
    for r in &a.records {
        set.insert(enc.embed(&r.id, &r.text).unwrap()).unwrap();
    }
    let eb = set.to_bytes().unwrap();
    let set_back = EmbeddingSet::from_bytes(&eb).unwrap();
    check("embeddings", set_back == set && set_back.to_bytes().unwrap() == eb);

    let data = TrainData::from_corpus(&a, &BaseEncoder::Hash(enc)).unwrap();
    let dims = ModelDims::new(1024, 32, 16);
    let tc = TrainConfig { epochs: 3, batch_size: 32, ..Default::default() };
    let m1 = train(&data, dims, &tc, &LossConfig::default()).unwrap();
    let m2 = train(&data, dims, &tc, &LossConfig::default()).unwrap();
    let mb = m1.params.to_bytes();
    check("train", mb == m2.params.to_bytes() && m1.history.to_csv() == m2.history.to_csv());
    let p_back = ModelParams::from_bytes(&mb).unwrap();
    check("model", p_back == m1.params && p_back.to_bytes() == mb);

    let all: Vec<usize> = (0..a.len()).collect();
    let mut index =
        VectorIndex::build(corpus_entries(&m1.params, &BaseEncoder::Hash(enc), &a, &all[..200]).unwrap()).unwrap();
    index.add_unseen(corpus_entries(&m1.params, &BaseEncoder::Hash(enc), &a, &all[200..]).unwrap()).unwrap();
    let ib = index.to_bytes().unwrap();
    let i_back = VectorIndex::from_bytes(&ib).unwrap();
    check("index", i_back == index && i_back.to_bytes().unwrap() == ib);

    let detail = if ok {
        "synth and train repeat byte-identically; corpus, embedding, model and index files round-trip bit-exactly".into()
    } else {
        format!("failed: {}", notes.join(", "))
    };
    verdict(ok, detail)
}

/// The trained model shared by the end-to-end criteria.
struct Pipeline {
    corpus: CorpusDataset,
    encoder: BaseEncoder,
    params: ModelParams,
    index: VectorIndex,
    train_time: Duration,
}

fn build_pipeline() -> Pipeline {
    let corpus = generate_corpus(&SynthConfig::default()).unwrap();
    let encoder = BaseEncoder::Hash(HashEncoder::default());
    let start = Instant::now();
    let data = TrainData::from_corpus(&corpus, &encoder).unwrap();
    let out = train(&data, ModelDims::default(), &TrainConfig::default(), &LossConfig::default()).unwrap();
    let mut known = corpus.split_indices(Split::Train);
    known.extend(corpus.split_indices(Split::Val));
    let index = VectorIndex::build(corpus_entries(&out.params, &encoder, &corpus, &known).unwrap()).unwrap();
    Pipeline { corpus, encoder, params: out.params, index, train_time: start.elapsed() }
}

fn family_gold(codes: &LabelCodes) -> FamilyClass {
    FamilyClass::of(codes)
}

fn label_of(c: FamilyClass, families: &FamilyTable) -> String {
    c.label(families)
}

fn end_to_end(p: &Pipeline) -> (Verdict, Vec<EmbeddingVector>) {
    let start = Instant::now();
    let test = p.corpus.split_indices(Split::Test);
    let embs = corpus_embeddings(&p.params, &p.encoder, &p.corpus, &test).unwrap();
    let knn = KnnConfig::default();
    let (mut pred, mut gold, mut fam_pred, mut fam_gold) = (vec![], vec![], vec![], vec![]);
    for (&i, e) in test.iter().zip(&embs) {
        let codes = p.corpus.codes(&p.corpus.records[i]);
        pred.push(fuzzy_knn_classify(&p.index, e, &knn).unwrap().predicted);
        gold.push(codes.class());
        fam_pred.push(label_of(classify_family(&p.index, e, &knn).unwrap().predicted, &p.corpus.families));
        fam_gold.push(label_of(family_gold(&codes), &p.corpus.families));
    }
    let three = evaluate(&pred, &gold).unwrap();
    let fam = LabelMetrics::from_labels(&fam_pred, &fam_gold).unwrap();
    let total = p.train_time + start.elapsed();
    let pass = three.metrics.accuracy >= 0.90 && fam.accuracy >= 0.85 && total.as_secs() < 600;
    let detail = format!(
        "3-class acc {:.3} (F1 {:.3}), family acc {:.3} on {} test docs; train+eval {}",
        three.metrics.accuracy,
        three.metrics.f1_macro,
        fam.accuracy,
        test.len(),
        secs(total)
    );
    (verdict(pass, detail), embs)
}

fn ordering(p: &Pipeline, test_embs: &[EmbeddingVector]) -> Verdict {
    let codes: Vec<LabelCodes> =
        p.corpus.split_indices(Split::Test).iter().map(|&i| p.corpus.codes(&p.corpus.records[i])).collect();
    let report: OrderingReport = ordering_diagnostic(test_embs, &codes).unwrap();
    let means: Vec<String> =
        report.levels.iter().map(|l| l.mean.map_or("n/a".into(), |m| format!("{m:.3}"))).collect();
    let pass = report.levels.iter().all(|l| l.mean.is_some()) && report.gaps.iter().all(|g| g.gap >= -0.01);
    let min_gap = report.gaps.iter().map(|g| g.gap).fold(f64::INFINITY, f64::min);
    verdict(pass, format!("m1..m5 = [{}], smallest gap {min_gap:.4}", means.join(", ")))
}

struct Unseen {
    family_before: f64,
    family_after: f64,
    direct: f64,
    knn_before: f64,
    knn_after: f64,
    adapted: usize,
    tested: usize,
}

fn unseen_family(p: &Pipeline) -> Unseen {
    let new_name = FAMILY_NAMES[3];
    let wider = generate_corpus(&SynthConfig { n_families: 4, ..Default::default() }).unwrap();
    let of_new = |split_ok: &dyn Fn(Split) -> bool, source: Source| -> Vec<usize> {
        (0..wider.len())
            .filter(|&i| {
                let r = &wider.records[i];
                r.label.family.as_deref() == Some(new_name) && r.label.source == source && split_ok(r.split)
            })
            .collect()
    };
    let not_test = |s: Split| s != Split::Test;
    let is_test = |s: Split| s == Split::Test;

    // family codes follow the index's table; the new family gets the next code
    let mut families = p.corpus.families.clone();
    let new_code = families.intern(new_name).unwrap();
    let codes_for = |i: usize| -> LabelCodes {
        match wider.records[i].label.source {
            Source::Llm => LabelCodes::llm(new_code),
            Source::Collab => LabelCodes::collab(new_code),
            Source::Human => LabelCodes::human(),
        }
    };

    let mut test = of_new(&is_test, Source::Llm);
    test.extend(of_new(&is_test, Source::Collab));
    let test_embs = corpus_embeddings(&p.params, &p.encoder, &wider, &test).unwrap();
    let knn = KnnConfig::default();
    let score = |index: &VectorIndex| -> (f64, f64) {
        let (mut fam_hits, mut bin_hits) = (0usize, 0usize);
        for (&i, e) in test.iter().zip(&test_embs) {
            let gold = codes_for(i);
            fam_hits += (classify_family(index, e, &knn).unwrap().predicted == FamilyClass::Family(new_code)) as usize;
            let says_llm = fuzzy_knn_classify(index, e, &knn).unwrap().predicted == AuthorClass::Llm;
            bin_hits += (says_llm == (gold.x == 0)) as usize;
        }
        (fam_hits as f64 / test.len() as f64, bin_hits as f64 / test.len() as f64)
    };
    let direct_hits =
        test.iter().zip(&test_embs).filter(|(&i, e)| classify_direct(&p.params, e) == (codes_for(i).x == 0)).count();

    let (family_before, knn_before) = score(&p.index);
    let mut adapt: Vec<usize> = of_new(&not_test, Source::Llm).into_iter().take(50).collect();
    adapt.extend(of_new(&not_test, Source::Collab).into_iter().take(50));
    let mut index = p.index.clone();
    let entries = adapt
        .iter()
        .map(|&i| {
            let e = project(&p.params, &p.encoder.encode_record(&wider.records[i]).unwrap()).unwrap();
            IndexEntry::new(wider.records[i].id.clone(), e.to_f32(), codes_for(i))
        })
        .collect();
    index.add_unseen(entries).unwrap();
    let (family_after, knn_after) = score(&index);
    Unseen {
        family_before,
        family_after,
        direct: direct_hits as f64 / test.len() as f64,
        knn_before,
        knn_after,
        adapted: adapt.len(),
        tested: test.len(),
    }
}

fn main() {
    let mut results: Vec<(u32, &str, Verdict)> = Vec::new();
    let mut run = |n: u32, name: &'static str, v: Verdict| {
        println!("criterion {n:>2} {:<28} {}  {}", name, if v.pass { "PASS" } else { "FAIL" }, v.detail);
        results.push((n, name, v));
    };
    run(1, "loss oracle", loss_oracle());
    run(2, "gradient check", gradient_check());
    run(3, "analytic loss values", analytic_values());
    run(4, "knn oracle", knn_oracle());
    run(9, "query latency", latency());
    run(10, "determinism and round-trips", determinism_and_round_trips());

    let pipeline = build_pipeline();
    let (v5, test_embs) = end_to_end(&pipeline);
    run(5, "synthetic end-to-end", v5);
    run(6, "similarity ordering", ordering(&pipeline, &test_embs));
    let u = unseen_family(&pipeline);
    run(
        7,
        "training-free adaptation",
        verdict(
            u.family_after - u.family_before >= 0.20,
            format!(
                "new-family accuracy {:.3} -> {:.3} after adding {} examples ({} test docs)",
                u.family_before, u.family_after, u.adapted, u.tested
            ),
        ),
    );
    run(
        8,
        "direct head vs fuzzy knn",
        verdict(
            u.direct <= u.knn_before && u.knn_after - u.direct >= 0.10,
            format!(
                "fully-LLM decision: direct {:.3}, knn before {:.3}, knn after {:.3}",
                u.direct, u.knn_before, u.knn_after
            ),
        ),
    );

    let failed: Vec<u32> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    println!("acceptance: {} of {} criteria pass", results.len() - failed.len(), results.len());
    if !failed.is_empty() {
        println!("failing: {failed:?}");
        std::process::exit(1);
    }
}
