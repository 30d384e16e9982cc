use super::*;

fn row<'a>(t: &'a [f64], p: &'a [f64], m: &'a [bool]) -> EvalRow<'a> {
    EvalRow::new(t, p, m).unwrap()
}

#[test]
fn kl_examples() {
    let t = [0.2, 0.3, 0.5];
    let m = [true; 3];
    assert!(kl_row(&row(&t, &t, &m), KL_EPS).abs() < 1e-12);

    let mut t = vec![0.0; 50];
    t[0] = 1.0;
    let p = vec![0.02; 50];
    let m = vec![true; 50];
    let want = ((1.0 + KL_EPS) / (0.02 + KL_EPS)).ln();
    assert!((kl_row(&row(&t, &p, &m), KL_EPS) - want).abs() < 1e-12);
    assert!((want - 3.912).abs() < 1e-3);

    let t = [0.5, 0.5, 0.0];
    let (p1, p2) = ([0.4, 0.6, 0.3], [0.4, 0.6, 0.9]);
    let m = [true, true, false];
    assert_eq!(kl_row(&row(&t, &p1, &m), KL_EPS), kl_row(&row(&t, &p2, &m), KL_EPS));
}

#[test]
fn mae_and_top1_examples() {
    let m = [true; 2];
    assert_eq!(mae_row(&row(&[1.0, 0.0], &[0.5, 0.5], &m)).unwrap(), 0.5);
    assert_eq!(mae_row(&row(&[0.3, 0.7], &[0.3, 0.7], &m)).unwrap(), 0.0);
    assert_eq!(top1_row(&row(&[0.3, 0.7], &[0.3, 0.7], &m)).unwrap(), 1.0);
    let m3 = [true; 3];
    assert_eq!(top1_row(&row(&[0.4, 0.4, 0.2], &[0.2, 0.5, 0.3], &m3)).unwrap(), 1.0);
    assert_eq!(top1_row(&row(&[0.8, 0.1, 0.1], &[0.2, 0.5, 0.3], &m3)).unwrap(), 0.0);
    assert!(matches!(top1_row(&row(&[1.0], &[1.0], &[false])), Err(Error::DegenerateMask)));
}

#[test]
fn ndcg_and_recall_examples() {
    let m = [true; 4];
    let t = [0.1, 0.2, 0.3, 0.4];
    assert!((ndcg_row(&row(&t, &t, &m), 4).unwrap().unwrap() - 1.0).abs() < 1e-12);
    let t = [1.0, 0.0, 0.0, 0.0];
    let p = [0.3, 0.4, 0.2, 0.1];
    let want = 1.0 / 3f64.log2();
    assert!((ndcg_row(&row(&t, &p, &m), 2).unwrap().unwrap() - want).abs() < 1e-12);
    assert_eq!(ndcg_row(&row(&[0.0; 4], &p, &m), 2).unwrap(), None);

    let t = [0.25; 4];
    assert_eq!(recall_row(&row(&t, &p, &m), 4), Some(1.0));
    assert_eq!(recall_row(&row(&t, &p, &m), 2), Some(0.5));
    assert_eq!(recall_row(&row(&[0.0; 4], &p, &m), 2), None);
}

#[test]
fn ties_break_to_lower_index() {
    let r = row(&[0.0, 1.0, 0.0], &[0.3, 0.3, 0.4], &[true; 3]);
    assert_eq!(r.ranking(), vec![2, 0, 1]);
}

#[test]
fn r2_examples() {
    let m = [true; 3];
    let (t1, t2) = ([0.2, 0.3, 0.5], [0.6, 0.3, 0.1]);
    let rows = [row(&t1, &t1, &m), row(&t2, &t2, &m)];
    assert_eq!(r2_global(rows.iter()).unwrap(), 1.0);
    let mean = [1.0 / 3.0; 3];
    let rows = [row(&t1, &mean, &m), row(&t2, &mean, &m)];
    assert!(r2_global(rows.iter()).unwrap().abs() < 1e-12);
    let flat = [1.0 / 3.0; 3];
    let rows = [row(&flat, &t1, &m)];
    assert!(matches!(r2_global(rows.iter()), Err(Error::UndefinedR2)));
    let rows = [row(&t1, &t2, &m), row(&t2, &t1, &m)];
    assert!(r2_global(rows.iter()).unwrap() < 0.0);
}

#[test]
fn histogram_covers_all_values() {
    let h = histogram(&[0.0, 0.5, 1.0, 1.0], 50);
    assert_eq!(h.len(), 50);
    assert_eq!(h.iter().map(|b| b.count).sum::<usize>(), 4);
    assert_eq!(h[49].count, 2);
    assert_eq!(h[0].count, 1);
}
