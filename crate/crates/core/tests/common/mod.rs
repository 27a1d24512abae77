#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::sync::{Arc, Mutex};

use convograph_core::gateway::{
    ChatGateway, ChatRequest, GatewayError, MockGateway, MockRule, MockScript,
};
use convograph_core::orchestrator::{
    AgentEvent, EventKind, EventLog, InterventionPolicy, InterventionRecord, SessionConfig,
};
use convograph_core::{Action, Author, ConversationGraph, NodeId, NodeStatus, Orchestrator};
use proptest::prelude::*;

// ---------------------------------------------------------------------------
// Random graphs

#[derive(Debug, Clone)]
pub enum GraphOp {
    Root,
    Respond(usize),
    Pending(usize),
    Prompt(Vec<usize>),
    Edit(usize),
    Move(usize, i16, i16),
}

pub fn graph_op() -> impl Strategy<Value = GraphOp> {
    prop_oneof![
        1 => Just(GraphOp::Root),
        4 => any::<usize>().prop_map(GraphOp::Respond),
        1 => any::<usize>().prop_map(GraphOp::Pending),
        4 => prop::collection::vec(any::<usize>(), 1..=3).prop_map(GraphOp::Prompt),
        1 => any::<usize>().prop_map(GraphOp::Edit),
        1 => (any::<usize>(), any::<i16>(), any::<i16>()).prop_map(|(i, x, y)| GraphOp::Move(i, x, y)),
    ]
}

pub fn graph_ops(max_nodes: usize) -> impl Strategy<Value = Vec<GraphOp>> {
    prop::collection::vec(graph_op(), 1..=max_nodes)
}

/// Builds a graph by applying ops, never exceeding `max_nodes` nodes. Ops
/// that do not fit the current graph degrade to adding a root.
pub fn build_graph(ops: &[GraphOp], max_nodes: usize) -> ConversationGraph {
    let mut g = ConversationGraph::new("random");
    for (k, op) in ops.iter().enumerate() {
        if g.len() >= max_nodes {
            break;
        }
        let prompts: Vec<NodeId> = g
            .nodes()
            .filter(|n| n.kind.is_prompt())
            .map(|n| n.id)
            .collect();
        let responses: Vec<NodeId> = g
            .nodes()
            .filter(|n| n.kind.is_response())
            .map(|n| n.id)
            .collect();
        let text = format!("text {k}");
        match op {
            GraphOp::Respond(i) if !prompts.is_empty() => {
                g.add_response(prompts[i % prompts.len()], &text, NodeStatus::Fresh)
                    .unwrap();
            }
            GraphOp::Pending(i) if !prompts.is_empty() => {
                g.add_response(prompts[i % prompts.len()], "", NodeStatus::Pending)
                    .unwrap();
            }
            GraphOp::Prompt(picks) if !responses.is_empty() => {
                let mut parents: Vec<NodeId> = picks
                    .iter()
                    .map(|i| responses[i % responses.len()])
                    .collect();
                parents.dedup();
                let mut seen = BTreeSet::new();
                parents.retain(|p| seen.insert(*p));
                g.add_prompt(&parents, &text, Author::Human).unwrap();
            }
            GraphOp::Edit(i) if !g.is_empty() => {
                let ids: Vec<NodeId> = g.nodes().map(|n| n.id).collect();
                g.edit_text(ids[i % ids.len()], &format!("edited {k}"))
                    .unwrap();
            }
            GraphOp::Move(i, x, y) if !g.is_empty() => {
                let ids: Vec<NodeId> = g.nodes().map(|n| n.id).collect();
                g.set_position(ids[i % ids.len()], f64::from(*x) / 4.0, f64::from(*y) / 4.0)
                    .unwrap();
            }
            _ => {
                g.add_root_prompt(&text, Author::Human).unwrap();
            }
        }
    }
    g
}

// ---------------------------------------------------------------------------
// Brute-force oracles

/// Transitive closure over parent -> child edges (Floyd-Warshall style).
pub struct Reachability {
    pub ids: Vec<NodeId>,
    index: BTreeMap<NodeId, usize>,
    reach: Vec<Vec<bool>>,
}

impl Reachability {
    pub fn new(g: &ConversationGraph) -> Self {
        let ids: Vec<NodeId> = g.nodes().map(|n| n.id).collect();
        let index: BTreeMap<NodeId, usize> =
            ids.iter().enumerate().map(|(i, id)| (*id, i)).collect();
        let n = ids.len();
        let mut reach = vec![vec![false; n]; n];
        for node in g.nodes() {
            for p in &node.parents {
                reach[index[p]][index[&node.id]] = true;
            }
        }
        for k in 0..n {
            for i in 0..n {
                if reach[i][k] {
                    let via = reach[k].clone();
                    for (cell, step) in reach[i].iter_mut().zip(via) {
                        *cell |= step;
                    }
                }
            }
        }
        Self { ids, index, reach }
    }

    pub fn reaches(&self, from: NodeId, to: NodeId) -> bool {
        self.reach[self.index[&from]][self.index[&to]]
    }

    pub fn descendants(&self, of: NodeId) -> BTreeSet<NodeId> {
        self.ids
            .iter()
            .copied()
            .filter(|d| self.reaches(of, *d))
            .collect()
    }

    pub fn ancestors(&self, of: NodeId) -> BTreeSet<NodeId> {
        self.ids
            .iter()
            .copied()
            .filter(|a| self.reaches(*a, of))
            .collect()
    }

    pub fn has_cycle(&self) -> bool {
        (0..self.ids.len()).any(|i| self.reach[i][i])
    }
}

/// Repeatedly takes the smallest `(created_at, id)` member whose in-set
/// parents are all taken.
pub fn naive_order(g: &ConversationGraph, members: &BTreeSet<NodeId>) -> Vec<NodeId> {
    let mut done: Vec<NodeId> = Vec::new();
    while done.len() < members.len() {
        let next = members
            .iter()
            .filter(|m| !done.contains(m))
            .filter(|m| {
                g.node(**m)
                    .unwrap()
                    .parents
                    .iter()
                    .all(|p| !members.contains(p) || done.contains(p))
            })
            .min_by_key(|m| (g.node(**m).unwrap().created_at, **m))
            .copied()
            .expect("acyclic");
        done.push(next);
    }
    done
}

/// Every topological order of `members` (exponential; small sets only).
pub fn all_topological_orders(
    g: &ConversationGraph,
    members: &BTreeSet<NodeId>,
) -> Vec<Vec<NodeId>> {
    fn go(
        g: &ConversationGraph,
        members: &BTreeSet<NodeId>,
        prefix: &mut Vec<NodeId>,
        out: &mut Vec<Vec<NodeId>>,
    ) {
        if prefix.len() == members.len() {
            out.push(prefix.clone());
            return;
        }
        for m in members {
            if prefix.contains(m) {
                continue;
            }
            let ready = g
                .node(*m)
                .unwrap()
                .parents
                .iter()
                .all(|p| !members.contains(p) || prefix.contains(p));
            if ready {
                prefix.push(*m);
                go(g, members, prefix, out);
                prefix.pop();
            }
        }
    }
    let mut out = Vec::new();
    go(g, members, &mut Vec::new(), &mut out);
    out
}

/// Order chosen by the timestamp rule among all legal orders.
pub fn brute_force_order(g: &ConversationGraph, members: &BTreeSet<NodeId>) -> Vec<NodeId> {
    let key = |order: &Vec<NodeId>| -> Vec<(u64, NodeId)> {
        order
            .iter()
            .map(|id| (g.node(*id).unwrap().created_at, *id))
            .collect()
    };
    all_topological_orders(g, members)
        .into_iter()
        .min_by_key(key)
        .expect("at least one order")
}

/// Expected transcript sources for `target`: closure plus target, in
/// timestamp order, without responses that never produced text.
pub fn expected_sources(g: &ConversationGraph, target: NodeId) -> Vec<NodeId> {
    let reach = Reachability::new(g);
    let mut members = reach.ancestors(target);
    members.insert(target);
    naive_order(g, &members)
        .into_iter()
        .filter(|id| {
            let n = g.node(*id).unwrap();
            !(n.kind.is_response() && n.text.is_empty())
        })
        .collect()
}

// ---------------------------------------------------------------------------
// The arithmetic session

pub const FIB_ADVICE_GUIDANCE: &str =
    "Point out when a new result is built from the two results before it.";

pub fn fib_script() -> MockScript {
    MockScript::new("Noted.")
        .rule(MockRule::contains("TASK: interpret", "The user made a structural move on the canvas."))
        .rule(
            MockRule::contains_all(
                ["TASK: meta-review", "= 8"],
                "kind: insert_prompt\nparents: n6 n8\nguidance: Name the pattern the user is building.\ntext: What is 5 + 8?",
            )
            .with_relevance(0.9),
        )
        .rule(
            MockRule::contains_all(
                ["TASK: meta-review", "= 5"],
                format!("kind: advice\nguidance: {FIB_ADVICE_GUIDANCE}\ntext: Each merge adds the two previous results; watch where the sequence goes."),
            )
            .with_relevance(0.7),
        )
        .rule(MockRule::contains("TASK: meta-review", "kind: advice\ntext: nothing specific").with_relevance(0.1))
        .rule(MockRule::last_user("1+1", "2"))
        .rule(MockRule::last_user("1+2", "3"))
        .rule(MockRule::last_user("Add 2 and 3", "2 + 3 = 5"))
        .rule(MockRule::last_user("Add 3 and 5", "3 + 5 = 8"))
        .rule(MockRule::last_user("Double it", "4"))
        .rule(MockRule::last_user("Is 8 special", "8 is a Fibonacci number."))
        .rule(MockRule::last_user("5 + 8", "13"))
}

pub fn fib_config() -> SessionConfig {
    SessionConfig {
        policy: InterventionPolicy {
            cooldown_actions: 3,
            relevance_threshold: 0.5,
            auto_respond_to_inserted: true,
        },
        ..SessionConfig::default()
    }
}

pub fn n(seq: u64) -> NodeId {
    NodeId::new(seq)
}

/// Six human moves: two roots, two merges, two continuations.
pub fn fib_actions() -> Vec<Action> {
    vec![
        Action::AddRoot { text: "1+1".into() },
        Action::AddRoot { text: "1+2".into() },
        Action::Merge {
            parents: vec![n(2), n(4)],
            text: "Add 2 and 3".into(),
        },
        Action::Merge {
            parents: vec![n(4), n(6)],
            text: "Add 3 and 5".into(),
        },
        Action::BuildFrom {
            parent: n(2),
            text: "Double it".into(),
        },
        Action::BuildFrom {
            parent: n(8),
            text: "Is 8 special?".into(),
        },
    ]
}

pub fn run_fib(gateway: Arc<dyn ChatGateway>) -> Orchestrator {
    let mut o = Orchestrator::new("arithmetic", gateway, fib_config()).unwrap();
    for action in fib_actions() {
        o.apply(action).unwrap();
    }
    o
}

pub fn fib_gateway() -> Arc<dyn ChatGateway> {
    Arc::new(MockGateway::new(fib_script()))
}

// ---------------------------------------------------------------------------
// Randomized sessions

/// Scripted stand-in for both agents. Meta reviews take their relevance from
/// a queue (cycled), alternate between advice and inserted prompts, and
/// attach inserted prompts to the newest response in the outline.
pub struct RelevanceGateway {
    relevances: Vec<f64>,
    cursor: Mutex<usize>,
    pub issued: Mutex<Vec<f64>>,
    fail_responses: bool,
}

impl RelevanceGateway {
    pub fn new(relevances: Vec<f64>, fail_responses: bool) -> Self {
        Self {
            relevances: if relevances.is_empty() {
                vec![0.0]
            } else {
                relevances
            },
            cursor: Mutex::new(0),
            issued: Mutex::new(Vec::new()),
            fail_responses,
        }
    }
}

impl ChatGateway for RelevanceGateway {
    fn name(&self) -> &str {
        "scripted"
    }

    fn complete(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        let text = request.full_text();
        let hash = request.hash();
        if text.contains("TASK: meta-review") {
            let mut cursor = self.cursor.lock().unwrap();
            let r = self.relevances[*cursor % self.relevances.len()];
            *cursor += 1;
            self.issued.lock().unwrap().push(r);
            let newest_response = text
                .lines()
                .filter(|l| l.contains(" assistant_response/"))
                .filter_map(|l| l.split_whitespace().next())
                .max_by_key(|id| id.trim_start_matches('n').parse::<u64>().unwrap_or(0))
                .unwrap_or("new_root")
                .to_string();
            return Ok(if cursor.is_multiple_of(2) {
                format!("relevance: {r}\nkind: insert_prompt\nparents: {newest_response}\ntext: Reflect on {newest_response}?")
            } else {
                format!("relevance: {r}\nkind: advice\nguidance: look for patterns\ntext: Consider the branches together.")
            });
        }
        if text.contains("TASK: interpret") {
            return Ok(format!("interpretation {}", &hash[..8]));
        }
        if self.fail_responses && hash.starts_with('0') {
            return Err(GatewayError::Provider {
                message: "scripted".into(),
                retryable: false,
            });
        }
        Ok(format!(
            "answer {} to {}",
            &hash[..8],
            request.last_user().unwrap_or("")
        ))
    }
}

#[derive(Debug, Clone)]
pub enum Move {
    AddRoot,
    BuildFrom(usize),
    Merge(Vec<usize>),
    Edit(usize),
    SetPosition(usize, i16, i16),
    Select(Vec<usize>),
    Accept(usize),
    Dismiss(usize),
}

fn move_strategy() -> impl Strategy<Value = Move> {
    prop_oneof![
        2 => Just(Move::AddRoot),
        4 => any::<usize>().prop_map(Move::BuildFrom),
        3 => prop::collection::vec(any::<usize>(), 2..=3).prop_map(Move::Merge),
        2 => any::<usize>().prop_map(Move::Edit),
        1 => (any::<usize>(), any::<i16>(), any::<i16>()).prop_map(|(i, x, y)| Move::SetPosition(i, x, y)),
        1 => prop::collection::vec(any::<usize>(), 0..=2).prop_map(Move::Select),
        2 => any::<usize>().prop_map(Move::Accept),
        1 => any::<usize>().prop_map(Move::Dismiss),
    ]
}

#[derive(Debug, Clone)]
pub struct SessionPlan {
    pub policy: InterventionPolicy,
    pub fanout: u32,
    pub relevances: Vec<f64>,
    pub fail_responses: bool,
    pub moves: Vec<Move>,
}

pub fn session_plan(max_moves: usize) -> impl Strategy<Value = SessionPlan> {
    (
        0u32..=4,
        prop::sample::select(vec![0.0, 0.3, 0.5, 0.8]),
        any::<bool>(),
        1u32..=2,
        prop::collection::vec(
            prop::sample::select(vec![0.0, 0.1, 0.2, 0.45, 0.5, 0.55, 0.7, 0.9, 1.0]),
            1..6,
        ),
        any::<bool>(),
        prop::collection::vec(move_strategy(), 1..=max_moves),
    )
        .prop_map(
            |(cooldown, threshold, auto, fanout, relevances, fail, moves)| SessionPlan {
                policy: InterventionPolicy {
                    cooldown_actions: cooldown,
                    relevance_threshold: threshold,
                    auto_respond_to_inserted: auto,
                },
                fanout,
                relevances,
                fail_responses: fail,
                moves,
            },
        )
}

pub fn plan_config(plan: &SessionPlan) -> SessionConfig {
    SessionConfig {
        policy: plan.policy.clone(),
        fanout: plan.fanout,
        ..SessionConfig::default()
    }
}

fn pick<T: Copy>(items: &[T], i: usize) -> Option<T> {
    (!items.is_empty()).then(|| items[i % items.len()])
}

/// Turns a move into an action that fits the current session, if any.
pub fn concretize(o: &Orchestrator, m: &Move, k: usize) -> Action {
    let g = o.graph();
    let responses: Vec<NodeId> = g
        .nodes()
        .filter(|n| n.kind.is_response())
        .map(|n| n.id)
        .collect();
    let all: Vec<NodeId> = g.nodes().map(|n| n.id).collect();
    let pending: Vec<u64> = o.pending_interventions().keys().copied().collect();
    let fallback = Action::AddRoot {
        text: format!("root {k}"),
    };
    match m {
        Move::AddRoot => fallback,
        Move::BuildFrom(i) => match pick(&responses, *i) {
            Some(parent) => Action::BuildFrom {
                parent,
                text: format!("build {k}"),
            },
            None => fallback,
        },
        Move::Merge(picks) => {
            let mut parents: Vec<NodeId> = Vec::new();
            for i in picks {
                if let Some(p) = pick(&responses, *i) {
                    if !parents.contains(&p) {
                        parents.push(p);
                    }
                }
            }
            if parents.len() >= 2 {
                Action::Merge {
                    parents,
                    text: format!("merge {k}"),
                }
            } else {
                fallback
            }
        }
        Move::Edit(i) => match pick(&all, *i) {
            Some(node) => Action::EditText {
                node,
                text: format!("edit {k}"),
            },
            None => fallback,
        },
        Move::SetPosition(i, x, y) => match pick(&all, *i) {
            Some(node) => Action::SetPosition {
                node,
                x: f64::from(*x),
                y: f64::from(*y),
            },
            None => fallback,
        },
        Move::Select(picks) => Action::Select {
            nodes: picks.iter().filter_map(|i| pick(&all, *i)).collect(),
        },
        Move::Accept(i) => match pick(&pending, *i) {
            Some(id) => Action::AcceptIntervention { id },
            None => fallback,
        },
        Move::Dismiss(i) => match pick(&pending, *i) {
            Some(id) => Action::DismissIntervention { id },
            None => fallback,
        },
    }
}

/// Runs a plan. Actions the orchestrator rejects (for example a Select of a
/// mixed pair is fine, but accepting an intervention whose parents changed
/// can fail) must leave no trace in the log.
pub fn run_plan(plan: &SessionPlan, gateway: Arc<dyn ChatGateway>) -> Orchestrator {
    let mut o = Orchestrator::new("random", gateway, plan_config(plan)).unwrap();
    for (k, m) in plan.moves.iter().enumerate() {
        let action = concretize(&o, m, k);
        let before = o.log().len();
        if o.apply(action).is_err() {
            assert_eq!(o.log().len(), before, "failed action left events");
        }
    }
    o
}

// ---------------------------------------------------------------------------
// Log checks

pub fn interventions(log: &EventLog) -> Vec<(AgentEvent, InterventionRecord)> {
    log.events()
        .iter()
        .filter(|e| e.kind == EventKind::MetaIntervention)
        .map(|e| {
            (
                e.clone(),
                serde_json::from_str(&e.payload).expect("record payload"),
            )
        })
        .collect()
}

/// Cooldown: at least `cooldown` human actions before the first and between
/// any two interventions.
pub fn check_cooldown(log: &EventLog, cooldown: u32) -> Result<(), String> {
    let mut count = 0usize;
    for e in log.events() {
        if e.is_human_action() {
            count += 1;
        }
        if e.kind == EventKind::MetaIntervention {
            if count < cooldown as usize {
                return Err(format!(
                    "intervention {} after only {count} human actions",
                    e.seq
                ));
            }
            count = 0;
        }
    }
    Ok(())
}

/// Interpretation after each human move, intervention after interpretation,
/// and no interpretation of anything the agents did.
pub fn check_loop_ordering(log: &EventLog) -> Result<(), String> {
    let events = log.events();
    let by_seq = |seq: u64| log.get(seq).ok_or(format!("missing event {seq}"));
    let mut interpreted: BTreeMap<u64, u64> = BTreeMap::new();
    for e in events
        .iter()
        .filter(|e| e.kind == EventKind::GraphInterpretation)
    {
        let cause = e
            .cause
            .ok_or(format!("interpretation {} has no cause", e.seq))?;
        let trigger = by_seq(cause)?;
        if trigger.actor != Author::Human || !trigger.is_human_action() {
            return Err(format!(
                "interpretation {} was triggered by {} event {}",
                e.seq,
                trigger.actor.as_str(),
                trigger.seq
            ));
        }
        if e.seq <= cause {
            return Err(format!(
                "interpretation {} precedes its trigger {cause}",
                e.seq
            ));
        }
        if interpreted.insert(cause, e.seq).is_some() {
            return Err(format!("event {cause} interpreted twice"));
        }
    }
    for e in events.iter().filter(|e| e.is_human_action()) {
        if !interpreted.contains_key(&e.seq) {
            return Err(format!("human event {} was never interpreted", e.seq));
        }
    }
    for e in events
        .iter()
        .filter(|e| e.kind == EventKind::MetaIntervention)
    {
        let cause = e
            .cause
            .ok_or(format!("intervention {} has no cause", e.seq))?;
        let interp = interpreted
            .get(&cause)
            .ok_or(format!("intervention {} has no interpreted trigger", e.seq))?;
        if !(cause < *interp && *interp < e.seq) {
            return Err(format!(
                "intervention {} out of order (trigger {cause}, interpretation {interp})",
                e.seq
            ));
        }
    }
    Ok(())
}

pub fn seqs_of(events: &[AgentEvent], kind: EventKind) -> Vec<u64> {
    events
        .iter()
        .filter(|e| e.kind == kind)
        .map(|e| e.seq)
        .collect()
}

pub fn kinds(events: &[AgentEvent]) -> Vec<EventKind> {
    events.iter().map(|e| e.kind).collect()
}
