mod common;

use cicd_core::ced::{embed, Embedded};
use cicd_core::dual_view::Dropout;
use cicd_core::isi::{co_interact, difference_matrix, local_evidence, sentence_reps};
use cicd_core::{Model, ModelConfig};
use cicd_tensor::{Tape, Tensor, Var};
use common::{co_attention, diff_matrix, micro_config, random_model};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn close(a: &[f64], b: &[f64], tol: f64) {
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(b) {
        assert!((x - y).abs() < tol, "{x} vs {y}");
    }
}

fn articles(tape: &mut Tape, model: &Model, texts: &[&[u32]]) -> Vec<Embedded> {
    let l = model.config.l;
    texts
        .iter()
        .map(|a| {
            let ids: Vec<u32> = (0..l).map(|j| a.get(j).copied().unwrap_or(0)).collect();
            let mask: Vec<bool> = (0..l).map(|j| j < a.len()).collect();
            embed(tape, model, &ids, &mask, &mut Dropout::disabled()).unwrap()
        })
        .collect()
}

fn rows(tape: &Tape, v: Var) -> Vec<Vec<f64>> {
    let t = tape.value(v);
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Vec<Vec<f64>> {
    (0..r).map(|_| (0..c).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect()
}

#[test]
fn sentence_rows() {
    let model = random_model(micro_config(), 8, 11, 0.5);
    let isi = model.ids.isi.unwrap();
    let mut tape = Tape::new();
    let arts = articles(&mut tape, &model, &[&[3, 4, 5], &[3, 4, 5], &[6]]);
    let hrs = sentence_reps(&mut tape, &model, &isi, &arts).unwrap();
    let r = rows(&tape, hrs);
    assert_eq!(r[0], r[1]);
    assert_eq!(r[0].len(), 8);
}

#[test]
fn full_scale_width() {
    let mut cfg = ModelConfig::resolve(Some("politifact3"), None, &serde_json::Value::Null).unwrap();
    cfg.components.ced = false;
    let model = Model::new(cfg, common::vocab(2)).unwrap();
    let isi = model.ids.isi.unwrap();
    let mut tape = Tape::new();
    let arts = articles(&mut tape, &model, &[&[3, 4]]);
    let hrs = sentence_reps(&mut tape, &model, &isi, &arts).unwrap();
    assert_eq!(tape.shape(hrs), &[1, 240]);
}

#[test]
fn last_position_matches_index_oracle() {
    let model = random_model(micro_config(), 8, 12, 0.5);
    let isi = model.ids.isi.unwrap();
    let texts: [&[u32]; 3] = [&[3, 4, 5, 6, 7, 8], &[9], &[4, 4, 10]];
    let mut tape = Tape::new();
    let arts = articles(&mut tape, &model, &texts);
    let hrs = sentence_reps(&mut tape, &model, &isi, &arts).unwrap();
    let hrs = rows(&tape, hrs);
    for (i, a) in arts.iter().enumerate() {
        let s = cicd_core::ced::encode_bilstm(&mut tape, &model, &isi.encoder, a).unwrap();
        let padded = s.padded(&mut tape, 8).unwrap();
        assert_eq!(hrs[i], tape.value(padded).row(texts[i].len() - 1));
    }
}

fn a_of(hrs: Vec<Vec<f64>>, wm: &[Vec<f64>], bm: &[f64], wn: &[Vec<f64>], bn: &[f64]) -> Vec<f64> {
    let mut tape = Tape::new();
    let mut c = |m: &[Vec<f64>]| tape.constant(Tensor::from_rows(m).unwrap()).unwrap();
    let (h, wm, wn) = (c(&hrs), c(wm), c(wn));
    let bm = tape.constant(Tensor::vector(bm.to_vec())).unwrap();
    let bn = tape.constant(Tensor::vector(bn.to_vec())).unwrap();
    let a = difference_matrix(&mut tape, h, wm, bm, wn, bn).unwrap();
    tape.value(a).values().to_vec()
}

#[test]
fn difference_matrix_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let (wm, wn) = (random_matrix(&mut rng, 4, 4), random_matrix(&mut rng, 4, 4));
    let (bm, bn) = (vec![0.1, -0.2, 0.3, 0.0], vec![0.0, 0.2, -0.1, 0.4]);

    assert_eq!(a_of(vec![vec![0.3, 0.1, -0.5, 0.9]], &wm, &bm, &wn, &bn), vec![1.0]);

    let same = vec![vec![0.3, 0.1, -0.5, 0.9]; 3];
    close(&a_of(same, &wm, &bm, &wn, &bn), &[1.0 / 3.0; 9], 1e-15);

    let hrs = random_matrix(&mut rng, 3, 4);
    let got = a_of(hrs.clone(), &wm, &bm, &wn, &bn);
    close(&got, &diff_matrix(&hrs, &wm, &bm, &wn, &bn).concat(), 1e-12);
}

#[test]
fn co_interaction_matches_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for p in 1..5 {
        let h: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let hc = random_matrix(&mut rng, p, 6);
        let mut tape = Tape::new();
        let hv = tape.constant(Tensor::vector(h.clone())).unwrap();
        let hcv = tape.constant(Tensor::from_rows(&hc).unwrap()).unwrap();
        let f = co_interact(&mut tape, hv, hcv).unwrap();
        let (r_in, c_in, w) = co_attention(&h, &hc, &vec![true; p]);
        let value = tape.value(f.value).values();
        assert_eq!(value.len(), 12);
        close(&value[..6], &r_in, 1e-12);
        close(&value[6..], &c_in, 1e-12);
        close(tape.value(f.weights.unwrap()).values(), &w, 1e-12);
    }
}

#[test]
fn local_evidence_layout() {
    let mut tape = Tape::new();
    let frags: Vec<Var> = (0..3)
        .map(|s| tape.constant(Tensor::vector(vec![s as f64 + 1.0; 4])).unwrap())
        .collect();
    let one = local_evidence(&mut tape, &frags[..1], 1, 4).unwrap();
    assert_eq!(tape.value(one).values(), tape.value(frags[0]).values());

    let padded = local_evidence(&mut tape, &frags[..2], 3, 4).unwrap();
    assert_eq!(&tape.value(padded).values()[8..], &[0.0; 4]);

    // sentinel constants come out in slot order
    let order = [frags[2], frags[0], frags[1]];
    let all = local_evidence(&mut tape, &order, 3, 4).unwrap();
    let v = tape.value(all).values();
    assert_eq!((v[0], v[4], v[8]), (3.0, 1.0, 2.0));
}
