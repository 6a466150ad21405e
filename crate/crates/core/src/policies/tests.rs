use super::*;
use crate::corpus::{gen_problem, Difficulty, Operator, WordSlot, THINK_OPEN};
use crate::diffcore::seeded_rng;
use crate::eval::extract_boxed;

fn vocab() -> Vocab {
    Vocab::new(3)
}

fn problem(id: u64) -> Problem {
    gen_problem(&mut seeded_rng(id), &Difficulty::default(), id)
}

#[test]
fn student_context_excludes_high_words() {
    let v = vocab();
    for id in 0..50 {
        let ctx = student_context_for(&v, &problem(id), Dialect(2)).unwrap();
        assert_eq!(ctx.role, Role::Student);
        assert!(ctx.tokens.iter().all(|&t| v.dialect_of(t) != Some(Dialect::HIGH)));
    }
}

#[test]
fn student_context_layout_and_length() {
    let v = vocab();
    let p = problem(3);
    let x = render(&v, &p, Dialect(1)).unwrap();
    let ctx = build_student_context(&v, Dialect(1), &x).unwrap();
    assert_eq!(ctx.tokens.len(), 1 + x.len() + 1 + 4);
    assert_eq!(ctx.tokens[0], BOS);
    assert_eq!(&ctx.tokens[1..1 + x.len()], &x[..]);
    assert_eq!(ctx.tokens[1 + x.len()], THINK_OPEN);
}

#[test]
fn contexts_of_two_problems_differ_only_in_the_problem_span() {
    let v = vocab();
    let (a, b) = (problem(1), problem(2));
    let d = Dialect(3);
    let (xa, xb) = (render(&v, &a, d).unwrap(), render(&v, &b, d).unwrap());
    let (ca, cb) = (
        build_student_context(&v, d, &xa).unwrap(),
        build_student_context(&v, d, &xb).unwrap(),
    );
    assert_eq!(ca.tokens[0], cb.tokens[0]);
    assert_eq!(ca.tokens[1 + xa.len()..], cb.tokens[1 + xb.len()..]);
}

#[test]
fn teacher_context_minus_privileged_spans_is_student_context() {
    let v = vocab();
    let p = problem(9);
    let d = Dialect(1);
    let s = student_context_for(&v, &p, d).unwrap();
    let t = teacher_context_for(&v, &p, d).unwrap();
    assert_eq!(t.role, Role::Teacher);
    let x_low = render(&v, &p, d).unwrap();
    let x_high = render(&v, &p, Dialect::HIGH).unwrap();
    let y = gen_reference_trace(&v, &p);
    // drop [sep, x_H, sep, y*, sep] after x_L
    let cut = 1 + x_low.len();
    let privileged = 3 + x_high.len() + y.len();
    assert_eq!(t.tokens[cut], SEP);
    assert_eq!(&t.tokens[cut + 1..cut + 1 + x_high.len()], &x_high[..]);
    let mut stripped = t.tokens[..cut].to_vec();
    stripped.extend_from_slice(&t.tokens[cut + privileged..]);
    assert_eq!(stripped, s.tokens);
    // the reference span inside the teacher context boxes the gold answer
    let y_start = cut + 2 + x_high.len();
    assert_eq!(extract_boxed(&t.tokens[y_start..y_start + y.len()]), Some(p.answer));
}

#[test]
fn contexts_share_the_prefix_suffix() {
    let v = vocab();
    let p = problem(4);
    for d in v.low_dialects() {
        let s = student_context_for(&v, &p, d).unwrap().tokens;
        let t = teacher_context_for(&v, &p, d).unwrap().tokens;
        let mut suffix = vec![THINK_OPEN];
        suffix.extend(think_prefix(&v, d).unwrap());
        assert!(s.ends_with(&suffix));
        assert!(t.ends_with(&suffix));
    }
}

#[test]
fn prefixes_are_in_partition_and_disjoint() {
    let v = vocab();
    let mut seen = std::collections::HashSet::new();
    for d in v.dialects() {
        let pre = think_prefix(&v, d).unwrap();
        assert_eq!(pre.len(), 4);
        assert_eq!(pre, think_prefix(&v, d).unwrap());
        for t in pre {
            assert!(v.partition(d).contains(&t));
            assert!(seen.insert(t));
        }
    }
    assert!(think_prefix(&v, Dialect(4)).is_err());
}

#[test]
fn rejects_missing_or_foreign_spans() {
    let v = vocab();
    assert!(build_student_context(&v, Dialect(1), &[]).is_err());
    let h_word = v.word(Dialect::HIGH, WordSlot::Subject(0));
    assert!(build_student_context(&v, Dialect(1), &[Operator::Plus.token(), h_word]).is_err());
    assert!(build_student_context(&v, Dialect(9), &[Operator::Plus.token()]).is_err());
    let p = problem(5);
    let x_low = render(&v, &p, Dialect(1)).unwrap();
    let wrong_high = render(&v, &p, Dialect(2)).unwrap();
    let y = gen_reference_trace(&v, &p);
    assert!(build_teacher_context(&v, Dialect(1), &x_low, &wrong_high, &y).is_err());
    assert!(build_teacher_context(&v, Dialect(1), &x_low, &render(&v, &p, Dialect::HIGH).unwrap(), &[]).is_err());
}

#[test]
fn distill_record_contexts() {
    let v = vocab();
    let p = problem(6);
    let rec = DistillRecord {
        id: 6,
        dialect: "L2".into(),
        x_low: render(&v, &p, Dialect(2)).unwrap(),
        x_high: render(&v, &p, Dialect::HIGH).unwrap(),
        y_star: gen_reference_trace(&v, &p),
        answer: p.answer,
    };
    assert_eq!(rec.student_context(&v).unwrap(), student_context_for(&v, &p, Dialect(2)).unwrap());
    assert_eq!(rec.teacher_context(&v).unwrap(), teacher_context_for(&v, &p, Dialect(2)).unwrap());
    let bad = DistillRecord { dialect: "L7".into(), ..rec };
    assert!(bad.student_context(&v).is_err());
}
