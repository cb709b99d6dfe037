//! Hand-authored scripted scenarios with known grades, and oracle fixtures
//! that replay a task's ground truth.

use super::tasks::ground_truth_digest;
use super::{BenchmarkTask, Category, EvalError};
use crate::fewshot::ScenarioTag;
use crate::llm::{ScriptBuilder, ScriptStep};
use crate::orchestrator::Outcome;
use crate::sql::SqlGateway;

const PM: &str = "project_manager";
const SE: &str = "sql_engineer";
const QA: &str = "quality_analyst";
const DA: &str = "data_analyst";

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: &'static str,
    pub task_id: String,
    pub question: String,
    pub ground_truth_sql: String,
    pub tag: ScenarioTag,
    pub steps: Vec<ScriptStep>,
    pub expected_category: Category,
    pub expected_outcome: Outcome,
    pub expected_iterations: u32,
}

fn plan(question: &str) -> ScriptBuilder {
    ScriptBuilder::new().action(PM, "This needs data from the traffic database.", "query_database", question)
}

fn sql(b: ScriptBuilder, query: &str) -> ScriptBuilder {
    b.action(SE, "Query the relevant table with the filters from the question.", "sql", query)
}

fn revise(b: ScriptBuilder, advice: &str) -> ScriptBuilder {
    b.action(QA, "The attempt failed; see the log.", "revise", advice).action(
        PM,
        "The problem is fixable.",
        "revise",
        "Apply the quality analyst's advice and try again.",
    )
}

fn answer(b: ScriptBuilder, text: &str) -> Vec<ScriptStep> {
    b.action(DA, "Summarize the rows for the user.", "answer", text).build()
}

struct Draft {
    name: &'static str,
    question: &'static str,
    truth: &'static str,
    tag: ScenarioTag,
}

impl Draft {
    fn into_scenario(self, steps: Vec<ScriptStep>, category: Category, outcome: Outcome, iterations: u32) -> Scenario {
        Scenario {
            name: self.name,
            task_id: format!("scenario-{}", self.name),
            question: self.question.to_string(),
            ground_truth_sql: self.truth.to_string(),
            tag: self.tag,
            steps,
            expected_category: category,
            expected_outcome: outcome,
            expected_iterations: iterations,
        }
    }
}

/// Ten scripted scenarios graded (1 non-functional, 2 runnable but
/// imperfect, 7 flawless) when run with `max_iterations`.
pub fn authored_scenarios(max_iterations: u32) -> Vec<Scenario> {
    use Category::*;
    let mut out = Vec::new();

    let d = Draft {
        name: "daily_tps",
        question: "What was the average TPS on each day on I-405?",
        truth: "SELECT t.local_date, AVG(t.avg_tps) AS avg_tps FROM dbo.TrafficIndex t JOIN dbo.Segments s ON s.segment_id = t.segment_id WHERE s.route = 'I-405' GROUP BY t.local_date ORDER BY t.local_date",
        tag: ScenarioTag::HistoricalStats,
    };
    let steps = answer(sql(plan(d.question), d.truth), "Daily average TPS on I-405 is listed by date; weekdays sit lower than the weekend.");
    out.push(d.into_scenario(steps, Flawless, Outcome::Answered, 1));

    let d = Draft {
        name: "misspelled_column",
        question: "What is the average speed on SR-520 by lane class?",
        truth: "SELECT lane_class, AVG(avg_speed) AS avg_speed FROM dbo.SegmentTrafficIndex WHERE route = 'SR-520' GROUP BY lane_class",
        tag: ScenarioTag::LaneBased,
    };
    let b = sql(plan(d.question), "SELECT lane_class, AVG(avg_sped) AS avg_speed FROM dbo.SegmentTrafficIndex WHERE route = 'SR-520' GROUP BY lane_class");
    let b = revise(b, "The column avg_sped does not exist; use avg_speed.");
    let steps = answer(sql(b, d.truth), "On SR-520 the carpool lanes average a higher speed than the general purpose lanes.");
    out.push(d.into_scenario(steps, Flawless, Outcome::Answered, 2));

    let d = Draft {
        name: "budget_exhausted",
        question: "How many trucks crossed I-5 during the data window?",
        truth: "SELECT SUM(total_volume) AS vehicles FROM dbo.SegmentTrafficIndex WHERE route = 'I-5'",
        tag: ScenarioTag::Counting,
    };
    let mut b = plan(d.question);
    for i in 1..=max_iterations {
        b = sql(b, &format!("SELECT SUM(truck_count) AS trucks FROM dbo.TruckCounts{i} WHERE route = 'I-5'"));
        if i < max_iterations {
            b = revise(b, "There is no truck table; vehicle classes are not recorded.");
        }
    }
    out.push(d.into_scenario(b.build(), NonFunctional, Outcome::Failed, max_iterations));

    let d = Draft {
        name: "wrong_column",
        question: "What was the average TPS on I-5 during the morning peak?",
        truth: "SELECT AVG(tps) AS avg_tps FROM dbo.SegmentTrafficIndex WHERE route = 'I-5' AND strftime('%H', local_time) BETWEEN '06' AND '08'",
        tag: ScenarioTag::Pattern,
    };
    let steps = answer(
        sql(plan(d.question), "SELECT AVG(avg_speed) AS avg_tps FROM dbo.SegmentTrafficIndex WHERE route = 'I-5' AND strftime('%H', local_time) BETWEEN '06' AND '08'"),
        "The morning peak average on I-5 is shown above.",
    );
    out.push(d.into_scenario(steps, RunnableImperfect, Outcome::Answered, 1));

    let d = Draft {
        name: "wrong_route",
        question: "How many vehicle miles were traveled on I-405 over the whole period?",
        truth: "SELECT SUM(t.vmt) AS vmt FROM dbo.TrafficIndex t JOIN dbo.Segments s ON s.segment_id = t.segment_id WHERE s.route = 'I-405'",
        tag: ScenarioTag::Emissions,
    };
    let steps = answer(
        sql(plan(d.question), "SELECT SUM(t.vmt) AS vmt FROM dbo.TrafficIndex t JOIN dbo.Segments s ON s.segment_id = t.segment_id WHERE s.route = 'I-5'"),
        "Total vehicle miles traveled are shown above.",
    );
    out.push(d.into_scenario(steps, RunnableImperfect, Outcome::Answered, 1));

    let d = Draft {
        name: "engine_error",
        question: "What is the highest minute TPS recorded on each I-5 segment?",
        truth: "SELECT segment_id, MAX(tps) AS max_tps FROM dbo.SegmentTrafficIndex WHERE route = 'I-5' GROUP BY segment_id ORDER BY segment_id",
        tag: ScenarioTag::HistoricalStats,
    };
    let b = sql(plan(d.question), "SELECT segment_id, MAXIMUM(tps) AS max_tps FROM dbo.SegmentTrafficIndex WHERE route = 'I-5' GROUP BY segment_id ORDER BY segment_id");
    let b = revise(b, "SQLite has no MAXIMUM function; use MAX.");
    let steps = answer(sql(b, d.truth), "Every I-5 segment reached free-flow conditions at some point.");
    out.push(d.into_scenario(steps, Flawless, Outcome::Answered, 2));

    let d = Draft {
        name: "empty_result",
        question: "List the HOV detectors on SR-520.",
        truth: "SELECT detector_id, milepost FROM dbo.cabinets WHERE route = 'SR-520' AND lane_class = 'HOV' ORDER BY detector_id",
        tag: ScenarioTag::LaneBased,
    };
    let b = sql(plan(d.question), "SELECT detector_id, milepost FROM dbo.cabinets WHERE route = 'SR-520' AND lane_class = 'carpool' ORDER BY detector_id");
    let b = revise(b, "Lane classes are coded 'HOV' and 'GP'; filter on lane_class = 'HOV'.");
    let steps = answer(sql(b, d.truth), "SR-520 has HOV detectors at the mileposts listed.");
    out.push(d.into_scenario(steps, Flawless, Outcome::Answered, 2));

    let d = Draft {
        name: "json_reask",
        question: "Estimate the CO2 emissions on SR-520 for the whole period.",
        truth: "SELECT SUM(t.vmt) * 400 / 1000000.0 AS co2_tonnes FROM dbo.TrafficIndex t JOIN dbo.Segments s ON s.segment_id = t.segment_id WHERE s.route = 'SR-520'",
        tag: ScenarioTag::Emissions,
    };
    let b = plan(d.question).reply(SE, format!("```sql\n{}\n```", d.truth));
    let steps = answer(sql(b, d.truth), "Estimated CO2 emissions on SR-520 are given in tonnes above.");
    out.push(d.into_scenario(steps, Flawless, Outcome::Answered, 1));

    let d = Draft {
        name: "lane_peak",
        question: "Compare HOV and GP lane TPS on I-5 during the evening peak.",
        truth: "SELECT lane_class, AVG(tps) AS avg_tps FROM dbo.SegmentTrafficIndex WHERE route = 'I-5' AND strftime('%H', local_time) BETWEEN '15' AND '18' GROUP BY lane_class ORDER BY lane_class",
        tag: ScenarioTag::LaneBased,
    };
    let steps = answer(sql(plan(d.question), d.truth), "During the evening peak the HOV lanes on I-5 score higher than the GP lanes.");
    out.push(d.into_scenario(steps, Flawless, Outcome::Answered, 1));

    let d = Draft {
        name: "detector_inventory",
        question: "How many loop detectors are installed on each route?",
        truth: "SELECT route, COUNT(*) AS detectors FROM dbo.cabinets GROUP BY route ORDER BY route",
        tag: ScenarioTag::Counting,
    };
    let steps = answer(sql(plan(d.question), d.truth), "Each route has six loop detectors.");
    out.push(d.into_scenario(steps, Flawless, Outcome::Answered, 1));

    out
}

/// Scenario tasks with digests computed on `gateway`.
pub fn scenario_tasks(gateway: &SqlGateway, scenarios: &[Scenario]) -> Result<Vec<BenchmarkTask>, EvalError> {
    scenarios
        .iter()
        .map(|s| {
            Ok(BenchmarkTask {
                task_id: s.task_id.clone(),
                question: s.question.clone(),
                digest: ground_truth_digest(gateway, &s.task_id, &s.ground_truth_sql)?,
                ground_truth_sql: s.ground_truth_sql.clone(),
                scenario_tag: s.tag,
            })
        })
        .collect()
}

/// Fixture that plans, replays the ground-truth SQL, then answers.
pub fn oracle_fixture(task: &BenchmarkTask) -> Vec<ScriptStep> {
    answer(sql(plan(&task.question), &task.ground_truth_sql), &format!("Here is the data for: {}", task.question))
}
