mod common;

use std::sync::Arc;

use common::*;
use convograph_core::gateway::{
    CaptureGateway, ChatGateway, MockFailure, MockGateway, MockRule, MockScript,
};
use convograph_core::orchestrator::{
    selection_affordances, Affordance, EventKind, InterventionKind, InterventionPolicy,
    InterventionState, MetaGuidance, MetaIntervention, SessionConfig,
};
use convograph_core::{Action, Author, NodeKind, NodeStatus, Orchestrator};
use proptest::prelude::*;

fn session(
    script: MockScript,
    policy: InterventionPolicy,
) -> (Orchestrator, Arc<CaptureGateway<MockGateway>>) {
    let capture = Arc::new(CaptureGateway::new(MockGateway::new(script)));
    let config = SessionConfig {
        policy,
        ..SessionConfig::default()
    };
    let o = Orchestrator::new("t", capture.clone(), config).unwrap();
    (o, capture)
}

fn never() -> InterventionPolicy {
    InterventionPolicy {
        cooldown_actions: u32::MAX,
        ..InterventionPolicy::default()
    }
}

#[test]
fn fibonacci_session_builds_the_expected_graph() {
    let o = run_fib(fib_gateway());
    let g = o.graph();
    let text = |id| g.node(n(id)).unwrap().text.as_str();
    assert_eq!(text(2), "2");
    assert_eq!(text(4), "3");
    assert_eq!(text(6), "2 + 3 = 5");
    assert_eq!(text(8), "3 + 5 = 8");
    assert_eq!(text(10), "4");
    assert_eq!(g.roots(), &[n(1), n(3)]);
    assert_eq!(g.node(n(5)).unwrap().parents, vec![n(2), n(4)]);
    assert_eq!(g.node(n(7)).unwrap().parents, vec![n(4), n(6)]);

    let inserted = g.node(n(13)).unwrap();
    assert_eq!(inserted.kind, NodeKind::AgentPrompt);
    assert_eq!(inserted.author, Author::MetaAgent);
    assert_eq!(inserted.parents, vec![n(6), n(8)]);
    assert_eq!(text(14), "13");
    assert!(g.validate().is_empty());

    let records = interventions(o.log());
    assert_eq!(records.len(), 2);
    assert_eq!(records[0].1.intervention.kind, InterventionKind::Advice);
    assert_eq!(
        records[1].1.intervention.kind,
        InterventionKind::InsertPrompt
    );
    assert_eq!(records[1].1.state, InterventionState::Applied);
    assert_eq!(records[1].1.node, Some(n(13)));
    check_loop_ordering(o.log()).unwrap();
    check_cooldown(o.log(), 3).unwrap();
}

#[test]
fn fibonacci_without_auto_mode_waits_for_acceptance() {
    let config = SessionConfig {
        policy: InterventionPolicy::default(),
        ..SessionConfig::default()
    };
    let mut o = Orchestrator::new("arith", fib_gateway(), config).unwrap();
    for a in fib_actions() {
        o.apply(a).unwrap();
    }
    assert_eq!(o.graph().len(), 12);
    let (&id, proposal) = o.pending_interventions().iter().next().unwrap();
    assert_eq!(proposal.attach_parents, vec![n(6), n(8)]);
    let out = o.apply(Action::AcceptIntervention { id }).unwrap();
    assert_eq!(out.created, vec![n(13), n(14)]);
    assert_eq!(o.graph().node(n(13)).unwrap().kind, NodeKind::AgentPrompt);
    assert_eq!(o.graph().node(n(14)).unwrap().text, "13");
    check_loop_ordering(o.log()).unwrap();
}

#[test]
fn guidance_reaches_later_responses_exactly_once() {
    let capture = Arc::new(CaptureGateway::new(MockGateway::new(fib_script())));
    run_fib(capture.clone());
    let responds: Vec<_> = capture
        .requests()
        .into_iter()
        .filter(|r| r.full_text().contains("TASK: respond"))
        .collect();
    assert_eq!(responds.len(), 7);
    // The advice arrives during the third move; the first three responses predate it.
    for (i, r) in responds.iter().enumerate() {
        let count = r.full_text().matches(FIB_ADVICE_GUIDANCE).count();
        let system = &r.messages[0].content;
        if (3..6).contains(&i) {
            assert_eq!(count, 1, "request {i}");
            assert!(system.contains(FIB_ADVICE_GUIDANCE));
        } else {
            assert_eq!(count, 0, "request {i}");
        }
    }
    // After the inserted prompt the guidance is the new intervention's.
    assert!(responds[6].messages[0].content.contains("Name the pattern"));
}

#[test]
fn merge_interpretation_request_names_both_parents() {
    let capture = Arc::new(CaptureGateway::new(MockGateway::new(fib_script())));
    run_fib(capture.clone());
    let interpret = capture
        .requests()
        .into_iter()
        .filter(|r| r.full_text().contains("TASK: interpret"))
        .nth(2)
        .unwrap();
    let text = interpret.full_text();
    assert!(
        text.contains("merged responses n2, n4 into prompt n5"),
        "{text}"
    );
}

#[test]
fn add_root_event_order() {
    let (mut o, _) = session(MockScript::new("fine"), never());
    let out = o
        .apply(Action::AddRoot {
            text: "How can I improve my design practice?".into(),
        })
        .unwrap();
    assert_eq!(
        kinds(&out.events),
        vec![
            EventKind::NodeAdded,
            EventKind::NodeAdded,
            EventKind::StatusChanged,
            EventKind::GraphInterpretation
        ]
    );
    assert_eq!(out.events[0].actor, Author::Human);
    assert_eq!(out.events[1].actor, Author::GraphAgent);
    assert_eq!(out.events[2].payload, r#"{"status":"fresh","text":"fine"}"#);
    assert_eq!(o.mailbox().len(), 1);
}

#[test]
fn branch_requests_are_isolated() {
    let (mut o, capture) = session(
        MockScript::new("answer").rule(MockRule::last_user("root question", "root answer")),
        never(),
    );
    let out = o
        .apply(Action::AddRoot {
            text: "root question".into(),
        })
        .unwrap();
    let r = out.created[1];
    capture.clear();
    o.apply(Action::BuildFrom {
        parent: r,
        text: "left branch".into(),
    })
    .unwrap();
    o.apply(Action::BuildFrom {
        parent: r,
        text: "right branch".into(),
    })
    .unwrap();
    let responds: Vec<_> = capture
        .requests()
        .into_iter()
        .filter(|r| r.full_text().contains("TASK: respond"))
        .collect();
    assert_eq!(responds.len(), 2);
    let transcript = |i: usize| -> Vec<String> {
        responds[i].messages[1..]
            .iter()
            .map(|m| m.content.clone())
            .collect()
    };
    assert_eq!(
        transcript(0),
        vec!["root question", "root answer", "left branch"]
    );
    assert_eq!(
        transcript(1),
        vec!["root question", "root answer", "right branch"]
    );
}

#[test]
fn edit_regenerates_parents_first_with_new_text() {
    let script = MockScript::new("?")
        .rule(MockRule::contains("TASK: interpret", "noted"))
        .rule(MockRule::last_user("first v2", "R1 regenerated"))
        .rule(MockRule::last_user("first", "R1 original"))
        .rule(MockRule::contains_all(
            ["R1 regenerated", "second"],
            "R2 from new R1",
        ))
        .rule(MockRule::last_user("second", "R2 original"));
    let (mut o, capture) = session(script, never());
    let out = o
        .apply(Action::AddRoot {
            text: "first".into(),
        })
        .unwrap();
    let (p1, r1) = (out.created[0], out.created[1]);
    let out = o
        .apply(Action::BuildFrom {
            parent: r1,
            text: "second".into(),
        })
        .unwrap();
    let r2 = out.created[1];
    capture.clear();

    let out = o
        .apply(Action::EditText {
            node: p1,
            text: "first v2".into(),
        })
        .unwrap();
    assert_eq!(out.events[0].kind, EventKind::NodeEdited);
    assert_eq!(out.events[0].subject, vec![p1, r1, r2]);
    assert_eq!(o.graph().node(r1).unwrap().text, "R1 regenerated");
    assert_eq!(o.graph().node(r2).unwrap().text, "R2 from new R1");
    let responds: Vec<_> = capture
        .requests()
        .into_iter()
        .filter(|r| r.full_text().contains("TASK: respond"))
        .collect();
    assert_eq!(responds.len(), 2);
    assert!(responds[1].full_text().contains("R1 regenerated"));
    assert!(!responds[1].full_text().contains("R1 original"));
    let regen = out
        .events
        .iter()
        .find(|e| e.kind == EventKind::ResponsesRegenerated)
        .unwrap();
    assert_eq!(regen.subject, vec![r1, r2]);
    assert_eq!(regen.actor, Author::GraphAgent);
}

#[test]
fn failed_regeneration_keeps_descendants_stale() {
    let script = MockScript::new("ok")
        .rule(MockRule::last_user("first v2", "").failing(MockFailure::Timeout))
        .rule(MockRule::last_user("first", "R1"));
    let (mut o, _) = session(script, never());
    let out = o
        .apply(Action::AddRoot {
            text: "first".into(),
        })
        .unwrap();
    let (p1, r1) = (out.created[0], out.created[1]);
    let r2 = o
        .apply(Action::BuildFrom {
            parent: r1,
            text: "second".into(),
        })
        .unwrap()
        .created[1];
    o.apply(Action::EditText {
        node: p1,
        text: "first v2".into(),
    })
    .unwrap();
    assert_eq!(o.graph().node(r1).unwrap().status, NodeStatus::Error);
    assert_eq!(o.graph().node(r1).unwrap().text, "R1");
    assert_eq!(o.graph().node(r2).unwrap().status, NodeStatus::Stale);
    assert!(o.graph().validate().is_empty());
    assert_eq!(o.regenerate_stale(), vec![]);
}

#[test]
fn no_stale_nodes_means_nothing_to_regenerate() {
    let (mut o, _) = session(MockScript::new("ok"), never());
    o.apply(Action::AddRoot { text: "a".into() }).unwrap();
    let before = o.log().len();
    assert!(o.regenerate_stale().is_empty());
    assert_eq!(o.log().len(), before);
}

#[test]
fn cooldown_and_threshold_gates() {
    let script = MockScript::new("ok").rule(
        MockRule::contains("TASK: meta-review", "kind: advice\ntext: generic").with_relevance(0.2),
    );
    let (mut o, capture) = session(script, InterventionPolicy::default());
    o.apply(Action::AddRoot { text: "a".into() }).unwrap();
    assert!(o.meta_review().is_none());
    let reviews = |c: &CaptureGateway<MockGateway>| {
        c.requests()
            .iter()
            .filter(|r| r.full_text().contains("TASK: meta-review"))
            .count()
    };
    assert_eq!(reviews(&capture), 0, "gated by cooldown before any call");
    o.apply(Action::AddRoot { text: "b".into() }).unwrap();
    o.apply(Action::AddRoot { text: "c".into() }).unwrap();
    assert_eq!(reviews(&capture), 1);
    assert!(interventions(o.log()).is_empty(), "below threshold");
}

#[test]
fn meta_review_gateway_failure_is_quiet() {
    let script = MockScript::new("ok")
        .rule(MockRule::contains("TASK: meta-review", "").failing(MockFailure::RateLimited));
    let policy = InterventionPolicy {
        cooldown_actions: 0,
        ..InterventionPolicy::default()
    };
    let (mut o, _) = session(script, policy);
    o.apply(Action::AddRoot { text: "a".into() }).unwrap();
    assert!(interventions(o.log()).is_empty());
    assert_eq!(o.take_gateway_failures().len(), 1);
}

#[test]
fn advice_changes_no_nodes_and_emits_one_event() {
    let (mut o, _) = session(MockScript::new("ok"), never());
    o.apply(Action::AddRoot { text: "a".into() }).unwrap();
    let (len, events) = (o.graph().len(), o.log().len());
    let node = o
        .apply_intervention(MetaIntervention {
            kind: InterventionKind::Advice,
            text: "connect thoughts on previous design experiences".into(),
            attach_parents: vec![],
            new_root: false,
            relevance: 0.8,
            trigger_seq: 1,
            guidance: None,
        })
        .unwrap();
    assert_eq!(node, None);
    assert_eq!(o.graph().len(), len);
    assert_eq!(o.log().len(), events + 1);
    assert_eq!(
        o.guidance(),
        Some(&MetaGuidance {
            text: "connect thoughts on previous design experiences".into(),
            issued_seq: events as u64 + 1
        })
    );
}

#[test]
fn insert_prompt_over_two_tips_and_unknown_parent() {
    let (mut o, _) = session(MockScript::new("ok"), never());
    let a = o
        .apply(Action::AddRoot { text: "a".into() })
        .unwrap()
        .created[1];
    let b = o
        .apply(Action::AddRoot { text: "b".into() })
        .unwrap()
        .created[1];
    let insert = |parents| MetaIntervention {
        kind: InterventionKind::InsertPrompt,
        text: "How do these relate?".into(),
        attach_parents: parents,
        new_root: false,
        relevance: 0.9,
        trigger_seq: 1,
        guidance: None,
    };
    let before = (o.graph().clone(), o.log().len());
    let err = o.apply_intervention(insert(vec![a, n(99)])).unwrap_err();
    assert_eq!(err.code(), "unknown_parent");
    assert_eq!((o.graph().clone(), o.log().len()), before);

    let id = o.apply_intervention(insert(vec![a, b])).unwrap().unwrap();
    let node = o.graph().node(id).unwrap();
    assert_eq!(node.kind, NodeKind::AgentPrompt);
    assert_eq!(node.parents, vec![a, b]);
    assert!(o.graph().validate().is_empty());
    // Not auto mode: the inserted prompt waits for an answer.
    assert!(o.graph().children(id).is_empty());

    let err = o
        .apply_intervention(MetaIntervention {
            attach_parents: vec![],
            ..insert(vec![])
        })
        .unwrap_err();
    assert_eq!(err.code(), "missing_attachment");
    let root = o
        .apply_intervention(MetaIntervention {
            new_root: true,
            ..insert(vec![])
        })
        .unwrap()
        .unwrap();
    assert!(o.graph().roots().contains(&root));
}

#[test]
fn fanout_responses_get_distinct_perspectives() {
    let capture = Arc::new(CaptureGateway::new(MockGateway::new(MockScript::new("ok"))));
    let config = SessionConfig {
        policy: never(),
        fanout: 3,
        ..SessionConfig::default()
    };
    let mut o = Orchestrator::new("fan", capture.clone(), config).unwrap();
    let out = o.apply(Action::AddRoot { text: "q".into() }).unwrap();
    assert_eq!(out.created.len(), 4);
    let systems: Vec<String> = capture
        .requests()
        .iter()
        .filter(|r| r.full_text().contains("TASK: respond"))
        .map(|r| r.messages[0].content.clone())
        .collect();
    assert_eq!(systems.len(), 3);
    for (i, s) in systems.iter().enumerate() {
        assert!(s.contains(&format!("response {} of 3", i + 1)));
    }
    // Results are applied in creation order.
    let statuses: Vec<u64> = out
        .events
        .iter()
        .filter(|e| e.kind == EventKind::StatusChanged)
        .map(|e| e.subject[0].seq())
        .collect();
    assert_eq!(statuses, vec![2, 3, 4]);
}

#[test]
fn rejected_actions_emit_nothing() {
    let (mut o, _) = session(MockScript::new("ok"), never());
    let out = o.apply(Action::AddRoot { text: "a".into() }).unwrap();
    let before = o.log().len();
    for bad in [
        Action::Merge {
            parents: vec![out.created[1]],
            text: "m".into(),
        },
        Action::Merge {
            parents: vec![out.created[0], out.created[1]],
            text: "m".into(),
        },
        Action::BuildFrom {
            parent: n(42),
            text: "x".into(),
        },
        Action::EditText {
            node: out.created[0],
            text: String::new(),
        },
        Action::SetPosition {
            node: out.created[0],
            x: f64::NAN,
            y: 0.0,
        },
        Action::AddRoot {
            text: String::new(),
        },
        Action::DismissIntervention { id: 1 },
    ] {
        assert!(o.apply(bad).is_err());
    }
    assert_eq!(o.log().len(), before);
}

#[test]
fn select_reports_affordances() {
    let (mut o, _) = session(MockScript::new("ok"), never());
    let a = o
        .apply(Action::AddRoot { text: "a".into() })
        .unwrap()
        .created;
    let b = o
        .apply(Action::AddRoot { text: "b".into() })
        .unwrap()
        .created;
    let out = o
        .apply(Action::Select {
            nodes: vec![a[1], b[1]],
        })
        .unwrap();
    assert_eq!(out.affordances, Some(vec![Affordance::Merge]));
    assert_eq!(
        selection_affordances(o.graph(), &[]).unwrap(),
        vec![Affordance::AddRoot]
    );
    // Selection is not a mutating move and is not interpreted.
    assert_eq!(kinds(&out.events), vec![EventKind::SelectionChanged]);
}

#[test]
fn agent_events_do_not_count_toward_cooldown() {
    let policy = InterventionPolicy {
        cooldown_actions: 2,
        relevance_threshold: 0.5,
        auto_respond_to_inserted: true,
    };
    let script = MockScript::new("ok").rule(
        MockRule::contains(
            "TASK: meta-review",
            "kind: insert_prompt\nparents: new_root\ntext: A fresh angle?",
        )
        .with_relevance(0.9),
    );
    let (mut o, _) = session(script, policy);
    for i in 0..6 {
        o.apply(Action::AddRoot {
            text: format!("q{i}"),
        })
        .unwrap();
    }
    // Each insertion adds agent events, yet interventions stay two human moves apart.
    assert_eq!(interventions(o.log()).len(), 3);
    check_cooldown(o.log(), 2).unwrap();
    check_loop_ordering(o.log()).unwrap();
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(60))]

    #[test]
    fn random_sessions_keep_the_loop_invariants(plan in session_plan(14)) {
        let gateway = Arc::new(RelevanceGateway::new(plan.relevances.clone(), plan.fail_responses));
        let o = run_plan(&plan, gateway.clone() as Arc<dyn ChatGateway>);
        prop_assert!(o.graph().validate().is_empty());
        prop_assert_eq!(check_cooldown(o.log(), plan.policy.cooldown_actions), Ok(()));
        prop_assert_eq!(check_loop_ordering(o.log()), Ok(()));
        for (_, record) in interventions(o.log()) {
            prop_assert!(record.intervention.relevance >= plan.policy.relevance_threshold);
        }
        // Regeneration freshness: nothing stale is left whose ancestors are all fresh.
        for node in o.graph().nodes().filter(|n| n.status == NodeStatus::Stale) {
            let closure = convograph_core::context::ancestor_closure(o.graph(), node.id).unwrap();
            let blocked = closure.iter().any(|a| {
                let a = o.graph().node(*a).unwrap();
                a.kind.is_response() && a.status != NodeStatus::Fresh
            });
            prop_assert!(blocked, "{} is stale with a fresh history", node.id);
        }
    }
}
