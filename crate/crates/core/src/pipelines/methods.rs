use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DecomposerRecord, Engine, MethodId, QuestionContext, Trace};
use crate::answer::{canonicalize_answer, majority_answer, Prediction};
use crate::code::{run_code_with_repair, CodeMode, CodeStepInput};
use crate::llm::{CallTag, LlmClient};
use crate::prompting::{
    extract_answer_text, parse_decomposition, render_decomposition, Decomposition, PromptExtras, PromptKind,
    RepairTarget,
};
use crate::sql::{run_sql_step_with_repair, shape_of, SqlStepInput};

pub(super) fn dispatch(
    engine: &Engine,
    client: &LlmClient,
    method: MethodId,
    ctx: &QuestionContext<'_>,
    run: u32,
    seed: u64,
) -> Trace {
    let mut trace = Trace::new(ctx.question, method, run, client.model_id());
    accounted(client, &mut trace, |trace| match method {
        MethodId::Knowledge => knowledge(engine, client, ctx, trace),
        MethodId::Text2Sql => text2sql(engine, client, ctx, trace),
        MethodId::Sc(k) => self_consistency(engine, client, ctx, trace, k, seed),
        MethodId::T2scMulti => t2sc_multi(engine, client, ctx, trace),
        MethodId::T2scSingle => t2sc_single(engine, client, ctx, trace),
        MethodId::HybridMulti => hybrid(engine, client, ctx, trace, MethodId::T2scMulti),
        MethodId::HybridSingle => hybrid(engine, client, ctx, trace, MethodId::T2scSingle),
    });
    trace
}

/// Runs `f` and stores the calls it made in `trace`.
fn accounted(client: &LlmClient, trace: &mut Trace, f: impl FnOnce(&mut Trace)) {
    let scope = client.scope();
    let before = client.ledger().by_tag(scope);
    f(trace);
    let after = client.ledger().by_tag(scope);
    let delta: BTreeMap<CallTag, u64> = after
        .into_iter()
        .map(|(tag, n)| (tag, n - before.get(&tag).copied().unwrap_or(0)))
        .filter(|(_, n)| *n > 0)
        .collect();
    trace.llm_calls = delta.values().sum();
    trace.calls_by_tag = delta;
}

fn sub_trace(client: &LlmClient, parent: &Trace, f: impl FnOnce(&mut Trace)) -> Trace {
    let mut t = parent.clone_header();
    accounted(client, &mut t, f);
    t
}

impl Trace {
    fn clone_header(&self) -> Trace {
        Trace::blank(&self.question_id, &self.db_id, MethodId::Text2Sql, self.run, &self.model)
    }
}

fn knowledge(engine: &Engine, client: &LlmClient, ctx: &QuestionContext<'_>, trace: &mut Trace) {
    let prompt = engine
        .prompts
        .render(PromptKind::Knowledge, ctx.schema, ctx.question, &PromptExtras::default())
        .expect("knowledge prompt needs no extras");
    let Ok(reply) = client.complete(CallTag::Knowledge, prompt) else { return };
    let text = extract_answer_text(&reply.text);
    trace.prediction = match canonicalize_answer(&text) {
        Ok(a) => Prediction::Answer(a),
        Err(e) => {
            log::debug!("{}: unparseable direct answer: {e}", ctx.question.id);
            Prediction::Failure
        }
    };
    trace.raw_answer = Some(reply.text);
}

fn text2sql(engine: &Engine, client: &LlmClient, ctx: &QuestionContext<'_>, trace: &mut Trace) {
    let input = SqlStepInput { question: ctx.question, step: None, schema: ctx.schema };
    let exec = run_sql_step_with_repair(
        input,
        ctx.conn,
        &engine.prompts,
        client,
        &engine.settings.sql_limits,
        engine.settings.max_repairs,
    );
    if let Some(t) = &exec.table {
        trace.prediction = Prediction::Answer(t.to_answer_set());
    }
    trace.sql_executions.push(exec);
}

fn text2sql_samples(engine: &Engine, client: &LlmClient, ctx: &QuestionContext<'_>, trace: &Trace, k: u32) -> Vec<Trace> {
    (0..k).map(|_| sub_trace(client, trace, |t| text2sql(engine, client, ctx, t))).collect()
}

fn self_consistency(
    engine: &Engine,
    client: &LlmClient,
    ctx: &QuestionContext<'_>,
    trace: &mut Trace,
    k: u32,
    seed: u64,
) {
    trace.subruns = text2sql_samples(engine, client, ctx, trace, k);
    let predictions: Vec<Prediction> = trace.subruns.iter().map(|t| t.prediction.clone()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (winner, majority) =
        majority_answer(&predictions, &engine.settings.match_cfg, &mut rng).expect("k >= 2 candidates");
    trace.prediction = winner;
    trace.is_majority = Some(majority);
}

/// Decomposer call plus up to `max_repairs` repair calls, all tagged `decomposer`.
fn decompose(engine: &Engine, client: &LlmClient, ctx: &QuestionContext<'_>, trace: &mut Trace) -> Option<Decomposition> {
    let mut record = DecomposerRecord { attempts: Vec::new(), ok: false };
    let mut last: Option<(String, String)> = None;
    let mut result = None;
    for attempt in 0..=engine.settings.max_repairs {
        let kind = if attempt == 0 { PromptKind::Decomposer } else { PromptKind::Repair(RepairTarget::Decomposer) };
        let extras = PromptExtras {
            artifact: last.as_ref().map(|(a, _)| a.as_str()),
            error: last.as_ref().map(|(_, e)| e.as_str()),
            ..Default::default()
        };
        let prompt = engine.prompts.render(kind, ctx.schema, ctx.question, &extras).expect("extras supplied");
        let reply = match client.complete(CallTag::Decomposer, prompt) {
            Ok(r) => r.text,
            Err(e) => {
                record.attempts.push(Some(e.to_string()));
                break;
            }
        };
        match parse_decomposition(&reply) {
            Ok(d) => {
                record.attempts.push(None);
                record.ok = true;
                result = Some(d);
                break;
            }
            Err(e) => {
                record.attempts.push(Some(e.to_string()));
                last = Some((reply.chars().take(4000).collect(), e.to_string()));
            }
        }
    }
    trace.decomposer = Some(record);
    result
}

fn t2sc_multi(engine: &Engine, client: &LlmClient, ctx: &QuestionContext<'_>, trace: &mut Trace) {
    let Some(plan) = decompose(engine, client, ctx, trace) else { return };
    let sql_steps: Vec<String> = plan.sql_steps().map(|s| s.text.clone()).collect();
    let has_code = plan.has_code_step();
    trace.decomposition = Some(plan.clone());

    let mut tables = Vec::with_capacity(sql_steps.len());
    for step in &sql_steps {
        let input = SqlStepInput { question: ctx.question, step: Some(step), schema: ctx.schema };
        let mut exec = run_sql_step_with_repair(
            input,
            ctx.conn,
            &engine.prompts,
            client,
            &engine.settings.sql_limits,
            engine.settings.max_repairs,
        );
        let table = exec.table.take();
        trace.sql_executions.push(exec);
        match table {
            Some(t) => tables.push(t),
            None => return,
        }
    }

    if !has_code {
        // several independent results and no step to combine them: refuse to guess
        if let [only] = tables.as_slice() {
            trace.prediction = Prediction::Answer(only.to_answer_set());
        } else {
            log::warn!("{}: {} SQL steps but no Python step", ctx.question.id, tables.len());
        }
        return;
    }

    let shapes: Vec<String> = tables
        .iter()
        .enumerate()
        .map(|(i, t)| shape_of(t, engine.settings.shape_samples, &format!("listOfDFs[{i}]")).render())
        .collect();
    let shapes = shapes.join("\n");
    let decomposition = render_decomposition(&plan);
    let input = CodeStepInput {
        question: ctx.question,
        schema: ctx.schema,
        mode: CodeMode::Multi { tables: &tables, shapes: &shapes, decomposition: &decomposition },
    };
    finish_with_code(engine, client, input, trace);
}

fn t2sc_single(engine: &Engine, client: &LlmClient, ctx: &QuestionContext<'_>, trace: &mut Trace) {
    let input = CodeStepInput { question: ctx.question, schema: ctx.schema, mode: CodeMode::Single { db_path: ctx.db_path } };
    finish_with_code(engine, client, input, trace);
}

fn finish_with_code(engine: &Engine, client: &LlmClient, input: CodeStepInput<'_>, trace: &mut Trace) {
    let exec = run_code_with_repair(
        input,
        &engine.prompts,
        client,
        engine.sandbox.as_ref(),
        &engine.settings.sandbox_limits,
        engine.settings.max_repairs,
    );
    trace.used_python = exec.sandbox_runs() > 0;
    if let Some(a) = &exec.answer {
        trace.prediction = Prediction::Answer(a.clone());
    }
    trace.code_execution = Some(exec);
}

fn hybrid(engine: &Engine, client: &LlmClient, ctx: &QuestionContext<'_>, trace: &mut Trace, fallback: MethodId) {
    trace.subruns = text2sql_samples(engine, client, ctx, trace, 3);
    let cfg = &engine.settings.match_cfg;
    let runs = &trace.subruns;
    let agreed = (0..runs.len())
        .flat_map(|i| (i + 1..runs.len()).map(move |j| (i, j)))
        .find(|&(i, j)| runs[i].prediction.agrees_with(&runs[j].prediction, cfg))
        .map(|(i, _)| runs[i].prediction.clone());
    match agreed {
        Some(p) => {
            trace.prediction = p;
            trace.routed_to_t2sc = Some(false);
        }
        None => {
            trace.routed_to_t2sc = Some(true);
            match fallback {
                MethodId::T2scSingle => t2sc_single(engine, client, ctx, trace),
                _ => t2sc_multi(engine, client, ctx, trace),
            }
        }
    }
}
