use std::collections::HashSet;

use super::*;
use crate::diffcore::seeded_rng;
use crate::eval::extract_boxed;

fn small_spec() -> CorpusSpec {
    CorpusSpec {
        seed: 11,
        n_dialects: 3,
        pretrain_high: 300,
        pretrain_low_per_dialect: 20,
        privileged_per_dialect: 10,
        distill_size: 40,
        eval_size: 25,
        difficulty: Difficulty::default(),
    }
}

/// Independent left-to-right evaluation over the rendered symbols.
fn oracle_value(p: &Problem) -> i64 {
    let mut text = String::new();
    for (i, v) in p.operands.iter().enumerate() {
        if i > 0 {
            text.push(p.ops[i - 1].symbol());
        }
        text.push_str(&v.to_string());
    }
    let mut acc: i64 = 0;
    let mut pending = '+';
    let mut num = String::new();
    for c in text.chars().chain(std::iter::once('#')) {
        if c.is_ascii_digit() {
            num.push(c);
            continue;
        }
        let v: i64 = num.parse().unwrap();
        acc = match pending {
            '+' => acc + v,
            '-' => acc - v,
            '*' => acc * v,
            _ => unreachable!(),
        };
        num.clear();
        pending = c;
    }
    acc
}

#[test]
fn vocab_layout() {
    let v = Vocab::new(3);
    assert_eq!(v.size(), 125);
    let mut owners = vec![None; v.size()];
    for d in v.dialects() {
        for id in v.partition(d) {
            assert!(owners[id as usize].is_none());
            owners[id as usize] = Some(d);
            assert_eq!(v.dialect_of(id), Some(d));
        }
    }
    for id in 0..21 {
        assert_eq!(v.dialect_of(id), None);
    }
    assert_eq!(v.dialect_of(125), None);
}

#[test]
fn encode_decode_round_trip() {
    let v = Vocab::new(3);
    for id in 0..v.size() as u32 {
        let t = v.decode(id).unwrap();
        assert_eq!(v.encode(t).unwrap(), id);
    }
    assert_eq!(Vocab::number(42), vec![Vocab::digit(4), Vocab::digit(2)]);
    assert_eq!(v.decode_all(&Vocab::number(42)).unwrap(), vec![Token::Digit(4), Token::Digit(2)]);
    assert!(matches!(v.decode(v.size() as u32 + 1), Err(CorpusError::Decode(_))));
    assert!(v.encode(Token::Digit(10)).is_err());
    assert!(v
        .encode(Token::Word {
            dialect: Dialect(4),
            slot: WordSlot::Question
        })
        .is_err());
}

#[test]
fn dialect_names() {
    assert_eq!(Dialect::parse("H"), Some(Dialect::HIGH));
    assert_eq!(Dialect::parse("L3"), Some(Dialect(3)));
    for bad in ["L0", "L03", "x", "L", ""] {
        assert_eq!(Dialect::parse(bad), None, "{bad}");
    }
    assert!(Vocab::new(3).parse_dialect("L4").is_err());
}

#[test]
fn left_associative_hand_example() {
    let p = Problem::new(0, vec![3, 4, 2], vec![Operator::Plus, Operator::Times], 0, 0).unwrap();
    assert_eq!(p.answer, 14);
}

#[test]
fn gen_problem_deterministic_and_correct() {
    let d = Difficulty::default();
    let a = gen_problem(&mut seeded_rng(5), &d, 1);
    let b = gen_problem(&mut seeded_rng(5), &d, 1);
    assert_eq!(a, b);
    let mut rng = seeded_rng(99);
    for i in 0..10_000 {
        let p = gen_problem(&mut rng, &d, i);
        assert_eq!(p.answer, oracle_value(&p));
        assert!((2..=4).contains(&p.ops.len()));
        assert!(p.operands.iter().all(|v| (1..=9).contains(v)));
        assert!(p.steps().iter().all(|s| (0..=99).contains(&s.result)));
    }
}

#[test]
fn difficulty_validation() {
    let mut d = Difficulty::default();
    assert!(d.validate().is_ok());
    d.value_max = 10;
    assert!(d.validate().is_err());
    let d = Difficulty { min_ops: 0, ..Difficulty::default() };
    assert!(d.validate().is_err());
}

#[test]
fn renderings_share_math_tokens_only() {
    let v = Vocab::new(3);
    let mut rng = seeded_rng(3);
    for i in 0..200 {
        let p = gen_problem(&mut rng, &Difficulty::default(), i);
        let h = render(&v, &p, Dialect::HIGH).unwrap();
        let l = render(&v, &p, Dialect(1)).unwrap();
        let shared = |s: &[u32]| s.iter().copied().filter(|&t| v.dialect_of(t).is_none()).collect::<Vec<_>>();
        assert_eq!(shared(&h), shared(&l));
        let hw: HashSet<u32> = h.iter().copied().filter(|&t| v.dialect_of(t).is_some()).collect();
        assert!(l.iter().all(|t| !hw.contains(t)));
        assert!(h.iter().all(|&t| v.dialect_of(t).map_or(true, |d| d == Dialect::HIGH)));
        assert!(l.iter().all(|&t| v.dialect_of(t).map_or(true, |d| d == Dialect(1))));
        // H leads with words, L with the expression
        assert!(v.dialect_of(h[0]).is_some());
        assert!(v.dialect_of(l[0]).is_none());
    }
}

#[test]
fn render_is_injective_and_parses_back() {
    let v = Vocab::new(3);
    let mut rng = seeded_rng(8);
    for d in [Dialect::HIGH, Dialect(2)] {
        let mut seen = std::collections::HashMap::new();
        for i in 0..10_000 {
            let p = gen_problem(&mut rng, &Difficulty::default(), i);
            let key = (p.structure(), p.subject, p.verb);
            let r = render(&v, &p, d).unwrap();
            if let Some(prev) = seen.insert(r.clone(), key.clone()) {
                assert_eq!(prev, key, "two problems share a rendering");
            }
            let parsed = parse_rendering(&v, &r).unwrap();
            assert_eq!(parsed.dialect, d);
            assert_eq!((parsed.operands, parsed.ops), p.structure());
            assert_eq!((parsed.subject, parsed.verb), (p.subject, p.verb));
        }
    }
}

#[test]
fn parse_rendering_rejects_garbage() {
    let v = Vocab::new(3);
    assert!(parse_rendering(&v, &[]).is_err());
    assert!(parse_rendering(&v, &[BOS, EOS, SEP, PLUS, MINUS, TIMES]).is_err());
    let p = Problem::new(0, vec![3, 4], vec![Operator::Plus], 1, 2).unwrap();
    let mut r = render(&v, &p, Dialect(1)).unwrap();
    r.swap(0, 1);
    assert!(parse_rendering(&v, &r).is_err());
}

#[test]
fn trace_hand_example() {
    let v = Vocab::new(3);
    let p = Problem::new(0, vec![3, 4], vec![Operator::Plus], 0, 0).unwrap();
    let t = gen_reference_trace(&v, &p);
    let then = v.word(Dialect::HIGH, WordSlot::StepEnd);
    let d = Vocab::digit;
    assert_eq!(
        t,
        vec![d(3), PLUS, d(4), EQUALS, d(7), then, THINK_CLOSE, BOX_OPEN, d(7), BOX_CLOSE, EOS]
    );
    assert_eq!(extract_boxed(&t), Some(7));
}

#[test]
fn traces_box_the_answer_and_stay_in_h() {
    let v = Vocab::new(3);
    let mut rng = seeded_rng(21);
    for i in 0..10_000 {
        let p = gen_problem(&mut rng, &Difficulty::default(), i);
        let t = gen_reference_trace(&v, &p);
        assert_eq!(extract_boxed(&t), Some(p.answer));
        assert!(t.iter().all(|&id| v.dialect_of(id).map_or(true, |d| d.is_high())));
        assert_eq!(*t.last().unwrap(), EOS);
    }
}

#[test]
fn corpus_counts_and_splits() {
    let spec = small_spec();
    let c = generate_corpus(&spec).unwrap();
    let count = |k: DocKind| c.pretrain.iter().filter(|r| r.kind == k).count();
    assert_eq!(count(DocKind::Trace), 300);
    assert_eq!(count(DocKind::Answer), 60);
    assert_eq!(count(DocKind::Privileged), 30);
    assert_eq!(c.distill.len(), 3 * 40);
    assert_eq!(c.eval.len(), 4 * 25);
    let ids = |it: &mut dyn Iterator<Item = u64>| it.collect::<HashSet<u64>>();
    let pre = ids(&mut c.pretrain.iter().map(|r| r.id));
    let dis = ids(&mut c.distill.iter().map(|r| r.id));
    let ev = ids(&mut c.eval.iter().map(|r| r.id));
    assert_eq!(pre.len(), c.pretrain.len());
    assert_eq!(dis.len(), 40);
    assert_eq!(ev.len(), 25);
    assert!(pre.is_disjoint(&dis) && pre.is_disjoint(&ev) && dis.is_disjoint(&ev));
}

#[test]
fn corpus_problem_structures_are_globally_unique() {
    let c = generate_corpus(&small_spec()).unwrap();
    let v = c.vocab;
    let mut seen = HashSet::new();
    let mut check = |id: u64, x: &[u32]| {
        let p = parse_rendering(&v, x).unwrap();
        if seen.insert((p.operands.clone(), p.ops.clone())) {
            return;
        }
        panic!("structure of problem {id} repeats");
    };
    for r in c.distill.iter().filter(|r| r.dialect == "L1") {
        check(r.id, &r.x_low);
    }
    for r in c.eval.iter().filter(|r| r.dialect == "H") {
        check(r.id, &r.x_low);
    }
}

#[test]
fn corpus_partition_rules() {
    let c = generate_corpus(&small_spec()).unwrap();
    let v = c.vocab;
    let single = |s: &[u32]| s.iter().filter_map(|&t| v.dialect_of(t)).collect::<HashSet<_>>().len() <= 1;
    for r in &c.eval {
        assert!(single(&r.x_low));
        let d = v.parse_dialect(&r.dialect).unwrap();
        assert!(r.x_low.iter().all(|&t| v.dialect_of(t).map_or(true, |o| o == d)));
    }
    for r in &c.distill {
        assert!(single(&r.x_low) && single(&r.x_high) && single(&r.y_star));
        assert_eq!(extract_boxed(&r.y_star), Some(r.answer));
        let p = parse_rendering(&v, &r.x_low).unwrap();
        assert_eq!(evaluate_chain(&p.operands, &p.ops), Some(r.answer));
        let q = parse_rendering(&v, &r.x_high).unwrap();
        assert_eq!(evaluate_chain(&q.operands, &q.ops), Some(r.answer));
    }
    for r in &c.pretrain {
        let d = v.parse_dialect(&r.dialect).unwrap();
        match r.kind {
            DocKind::Trace | DocKind::Answer => {
                assert!(r.tokens.iter().all(|&t| v.dialect_of(t).map_or(true, |o| o == d)))
            }
            DocKind::Privileged => {
                let after = r.tokens.iter().rposition(|&t| t == THINK_OPEN).unwrap();
                assert!(r.tokens[after..].iter().all(|&t| v.dialect_of(t).map_or(true, |o| o == d)));
            }
        }
        assert_eq!(r.tokens[0], BOS);
        assert_eq!(*r.tokens.last().unwrap(), EOS);
        if r.kind == DocKind::Answer {
            // no worked steps in the low-resource answer slice
            assert!(!r.tokens.contains(&EQUALS));
        }
    }
}

#[test]
fn build_corpus_is_byte_deterministic() {
    let spec = small_spec();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let pa = build_corpus(&spec, a.path()).unwrap();
    let pb = build_corpus(&spec, b.path()).unwrap();
    for (x, y) in pa.iter().zip(&pb) {
        assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap());
    }
    let c = generate_corpus(&spec).unwrap();
    assert_eq!(read_jsonl::<PretrainRecord>(&pa[0]).unwrap(), c.pretrain);
    assert_eq!(read_jsonl::<DistillRecord>(&pa[1]).unwrap(), c.distill);
    assert_eq!(read_jsonl::<EvalRecord>(&pa[2]).unwrap(), c.eval);
    assert_eq!(load_vocab(&pa[3]).unwrap(), c.vocab);
    let other = generate_corpus(&CorpusSpec { seed: 12, ..spec }).unwrap();
    assert_ne!(other.distill, c.distill);
}

#[test]
fn io_errors_name_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.jsonl");
    let err = read_jsonl::<EvalRecord>(&missing).unwrap_err().to_string();
    assert!(err.contains("nope.jsonl"), "{err}");
    let bad = dir.path().join("bad.jsonl");
    std::fs::write(&bad, "{\"id\":1,\"dialect\":\"H\",\"x_L\":[1],\"answer\":2}\n{\"id\":1}\n").unwrap();
    let err = read_jsonl::<EvalRecord>(&bad).unwrap_err();
    assert!(matches!(err, CorpusError::Parse { line: 2, .. }), "{err}");
}

#[test]
fn jsonl_field_names() {
    let r = DistillRecord {
        id: 1,
        dialect: "L1".into(),
        x_low: vec![7],
        x_high: vec![8],
        y_star: vec![9],
        answer: 3,
    };
    assert_eq!(
        serde_json::to_string(&r).unwrap(),
        r#"{"id":1,"dialect":"L1","x_L":[7],"x_H":[8],"y_star":[9],"answer":3}"#
    );
}

#[test]
fn spec_validation() {
    assert!(CorpusSpec::default().validate().is_ok());
    assert!(CorpusSpec { eval_size: 0, ..CorpusSpec::default() }.validate().is_err());
    assert!(CorpusSpec { n_dialects: 0, ..CorpusSpec::default() }.validate().is_err());
    let tiny = CorpusSpec {
        difficulty: Difficulty { operand_min: 1, operand_max: 1, min_ops: 1, max_ops: 1, value_max: 2 },
        ..small_spec()
    };
    assert!(matches!(generate_corpus(&tiny), Err(CorpusError::Exhausted(_))));
}
