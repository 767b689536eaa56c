//! Deliberately naive reference metrics: n-grams as space-joined strings,
//! LCS by exhaustive recursion with memo, every sum spelled out.

use std::collections::BTreeMap;

fn grams(s: &[&str], n: usize) -> BTreeMap<String, f64> {
    let mut m = BTreeMap::new();
    let mut i = 0;
    while i + n <= s.len() {
        *m.entry(s[i..i + n].join(" ")).or_insert(0.0) += 1.0;
        i += 1;
    }
    m
}

pub fn bleu(pairs: &[(&str, Vec<&str>)], n: usize) -> f64 {
    let mut log_sum = 0.0;
    for k in 1..=n {
        let (mut hit, mut all) = (0.0, 0.0);
        for (cand, refs) in pairs {
            let c: Vec<&str> = cand.split(' ').collect();
            for (g, cnt) in grams(&c, k) {
                let mut best: f64 = 0.0;
                for r in refs {
                    let r: Vec<&str> = r.split(' ').collect();
                    best = best.max(*grams(&r, k).get(&g).unwrap_or(&0.0));
                }
                hit += cnt.min(best);
                all += cnt;
            }
        }
        if hit == 0.0 {
            return 0.0;
        }
        log_sum += (hit / all).ln();
    }
    let (mut c_len, mut r_len) = (0.0, 0.0);
    for (cand, refs) in pairs {
        let c = cand.split(' ').count() as f64;
        let mut best = f64::INFINITY;
        let mut best_len = 0.0;
        for r in refs {
            let l = r.split(' ').count() as f64;
            let d = (l - c).abs();
            if d < best || (d == best && l < best_len) {
                best = d;
                best_len = l;
            }
        }
        c_len += c;
        r_len += best_len;
    }
    let bp = if c_len > r_len { 1.0 } else { (1.0 - r_len / c_len).exp() };
    bp * (log_sum / n as f64).exp()
}

fn lcs(a: &[&str], b: &[&str], memo: &mut BTreeMap<(usize, usize), usize>) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    if let Some(&v) = memo.get(&(a.len(), b.len())) {
        return v;
    }
    let v = if a[0] == b[0] {
        1 + lcs(&a[1..], &b[1..], memo)
    } else {
        lcs(&a[1..], b, memo).max(lcs(a, &b[1..], memo))
    };
    memo.insert((a.len(), b.len()), v);
    v
}

pub fn rouge_l(pairs: &[(&str, Vec<&str>)], beta: f64) -> f64 {
    let mut total = 0.0;
    for (cand, refs) in pairs {
        let c: Vec<&str> = cand.split(' ').collect();
        let (mut p, mut r) = (0.0f64, 0.0f64);
        for reference in refs {
            let rr: Vec<&str> = reference.split(' ').collect();
            let l = lcs(&c, &rr, &mut BTreeMap::new()) as f64;
            p = p.max(l / c.len() as f64);
            r = r.max(l / rr.len() as f64);
        }
        if p > 0.0 && r > 0.0 {
            total += (1.0 + beta * beta) * p * r / (r + beta * beta * p);
        }
    }
    total / pairs.len() as f64
}

pub fn cider(pairs: &[(&str, Vec<&str>)]) -> f64 {
    let n_docs = pairs.len() as f64;
    let mut df: BTreeMap<String, f64> = BTreeMap::new();
    for (_, refs) in pairs {
        let mut present: BTreeMap<String, bool> = BTreeMap::new();
        for r in refs {
            let r: Vec<&str> = r.split(' ').collect();
            for k in 1..=4 {
                for g in grams(&r, k).keys() {
                    present.insert(g.clone(), true);
                }
            }
        }
        for g in present.keys() {
            *df.entry(g.clone()).or_insert(0.0) += 1.0;
        }
    }
    let tfidf = |s: &[&str], k: usize| -> BTreeMap<String, f64> {
        grams(s, k)
            .into_iter()
            .map(|(g, c)| {
                let d = df.get(&g).copied().unwrap_or(1.0);
                let w = c * (n_docs / d).ln();
                (g, w)
            })
            .collect()
    };
    let mut total = 0.0;
    for (cand, refs) in pairs {
        let c: Vec<&str> = cand.split(' ').collect();
        let mut per_order = 0.0;
        for k in 1..=4 {
            let cv = tfidf(&c, k);
            let mut sum = 0.0;
            for r in refs {
                let r: Vec<&str> = r.split(' ').collect();
                let rv = tfidf(&r, k);
                let mut dot = 0.0;
                for (g, x) in &cv {
                    if let Some(y) = rv.get(g) {
                        dot += x * y;
                    }
                }
                let na: f64 = cv.values().map(|x| x * x).sum::<f64>().sqrt();
                let nb: f64 = rv.values().map(|x| x * x).sum::<f64>().sqrt();
                if na > 0.0 && nb > 0.0 {
                    sum += dot / (na * nb);
                }
            }
            per_order += sum / refs.len() as f64;
        }
        total += 10.0 * per_order / 4.0;
    }
    total / pairs.len() as f64
}

/// Ten candidate/reference sets in micro-world style.
pub fn hand_corpus() -> Vec<(&'static str, Vec<&'static str>)> {
    vec![
        ("what color is the ball ?", vec!["what color is the ball ?"]),
        ("what color is the cube ?", vec!["what color is the small cube ?", "what color is the cone ?"]),
        ("how many red objects are there ?", vec!["how many blue objects are there ?"]),
        ("is there a red ball ?", vec!["is there a small red ball ?", "is there a red ring ?"]),
        ("what shape is the green object ?", vec!["what shape is the large green object ?"]),
        ("how many cube objects are there ?", vec!["how many cube objects are there ?", "how many cubes ?"]),
        ("is there a ball ?", vec!["is there a blue star ?"]),
        ("what shape is the pink object ?", vec!["what color is the pink star ?"]),
        ("the the the the", vec!["the cat"]),
        ("how many large yellow objects are there ?", vec!["how many yellow objects are there ?", "is there a yellow cone ?"]),
    ]
}
