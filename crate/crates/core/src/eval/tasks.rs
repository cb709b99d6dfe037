//! Benchmark task generation over the seeded reference network.

use chrono::NaiveDate;

use super::{result_digest, BenchmarkTask, EvalError};
use crate::fewshot::ScenarioTag;
use crate::sql::{validate_sql, SchemaCatalog, SqlGateway, DEFAULT_MAX_ROWS, DEFAULT_TIMEOUT};
use crate::traffic::{generate_synthetic_network, Dataset, SynthConfig};

pub const REFERENCE_SEED: u64 = 7;
pub const REFERENCE_ROUTES: [&str; 3] = ["I-5", "I-405", "SR-520"];

/// The benchmark network: three routes, six detectors each, eight days.
pub fn reference_dataset(seed: u64) -> Result<Dataset, EvalError> {
    let mut config = SynthConfig::new(seed, &REFERENCE_ROUTES, 6, 8);
    config.start_date = NaiveDate::from_ymd_opt(2024, 4, 1).expect("valid date");
    generate_synthetic_network(&config).map_err(|e| EvalError::Dataset(e.to_string()))
}

pub fn reference_gateway(seed: u64) -> Result<SqlGateway, EvalError> {
    let gateway = SqlGateway::in_memory(SchemaCatalog::traffic()).map_err(|e| EvalError::Dataset(e.to_string()))?;
    gateway.load_dataset(&reference_dataset(seed)?).map_err(|e| EvalError::Dataset(e.to_string()))?;
    Ok(gateway)
}

/// A question pattern instantiated once per route. `{route}` is replaced
/// in both the question and the SQL.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TaskTemplate {
    pub id: &'static str,
    pub tag: ScenarioTag,
    pub question: &'static str,
    pub sql: &'static str,
}

pub fn task_templates() -> Vec<TaskTemplate> {
    vec![
        TaskTemplate {
            id: "recent",
            tag: ScenarioTag::RealTimeAdvisory,
            question: "What is the most recent loop detector data on {route}?",
            sql: "SELECT m.detector_id, m.speed, m.volume, m.occupancy FROM dbo.MinuteDataNW m JOIN dbo.cabinets c ON c.detector_id = m.detector_id WHERE c.route = '{route}' AND m.timestamp = (SELECT MAX(timestamp) FROM dbo.MinuteDataNW) ORDER BY m.detector_id LIMIT 50",
        },
        TaskTemplate {
            id: "weekday_tps",
            tag: ScenarioTag::HistoricalStats,
            question: "Compare the average TPS on {route} between weekdays and weekends.",
            sql: "SELECT CASE WHEN t.day_of_week IN ('Saturday', 'Sunday') THEN 'weekend' ELSE 'weekday' END AS day_type, AVG(t.avg_tps) AS avg_tps FROM dbo.TrafficIndex t JOIN dbo.Segments s ON s.segment_id = t.segment_id WHERE s.route = '{route}' GROUP BY day_type",
        },
        TaskTemplate {
            id: "evening_peak",
            tag: ScenarioTag::Pattern,
            question: "How was traffic on {route} during the weekday evening peak?",
            sql: "SELECT AVG(tps) AS avg_tps, MIN(tps) AS worst_tps, AVG(avg_speed) AS avg_speed FROM dbo.SegmentTrafficIndex WHERE route = '{route}' AND strftime('%H', local_time) BETWEEN '15' AND '18' AND strftime('%w', local_time) NOT IN ('0', '6')",
        },
        TaskTemplate {
            id: "hov_advisory",
            tag: ScenarioTag::LaneBased,
            question: "Should I use the HOV lane on {route} right now?",
            sql: "SELECT lane_class, AVG(tps) AS avg_tps, AVG(avg_speed) AS avg_speed FROM dbo.SegmentTrafficIndex WHERE route = '{route}' AND timestamp = (SELECT MAX(timestamp) FROM dbo.SegmentTrafficIndex) GROUP BY lane_class ORDER BY lane_class",
        },
        TaskTemplate {
            id: "segment_counts",
            tag: ScenarioTag::Counting,
            question: "What is the average number of vehicles per minute on each segment of {route}?",
            sql: "SELECT segment_id, SUM(total_volume) * 1.0 / COUNT(DISTINCT timestamp) AS vehicles_per_minute FROM dbo.SegmentTrafficIndex WHERE route = '{route}' GROUP BY segment_id ORDER BY segment_id",
        },
        TaskTemplate {
            id: "emissions",
            tag: ScenarioTag::Emissions,
            question: "Estimate the CO2 emissions on {route} for weekdays and weekends.",
            sql: "SELECT CASE WHEN t.day_of_week IN ('Saturday', 'Sunday') THEN 'weekend' ELSE 'weekday' END AS day_type, SUM(t.vmt) * 400 / 1000000.0 AS co2_tonnes FROM dbo.TrafficIndex t JOIN dbo.Segments s ON s.segment_id = t.segment_id WHERE s.route = '{route}' GROUP BY day_type",
        },
        TaskTemplate {
            id: "worst_hour",
            tag: ScenarioTag::HistoricalStats,
            question: "Which hour of the day has the lowest average TPS on {route}?",
            sql: "SELECT strftime('%H', local_time) AS hour, AVG(tps) AS avg_tps FROM dbo.SegmentTrafficIndex WHERE route = '{route}' GROUP BY hour ORDER BY avg_tps ASC LIMIT 1",
        },
    ]
}

fn route_slug(route: &str) -> String {
    route.to_ascii_lowercase().replace('-', "")
}

/// Validates and runs `sql`, returning the digest of its result.
pub(crate) fn ground_truth_digest(gateway: &SqlGateway, task_id: &str, sql: &str) -> Result<String, EvalError> {
    let invalid = |reason: String| EvalError::GroundTruthInvalid { task_id: task_id.to_string(), reason };
    let report = validate_sql(sql, gateway.catalog());
    if !report.is_ok() {
        return Err(invalid(report.summary()));
    }
    let result = gateway.execute(sql, DEFAULT_MAX_ROWS, DEFAULT_TIMEOUT).map_err(|e| invalid(e.log))?;
    if result.row_count == 0 {
        return Err(invalid("ground truth returns no rows".into()));
    }
    if result.truncated {
        return Err(invalid("ground truth result is truncated".into()));
    }
    Ok(result_digest(&result, super::has_order_by(sql)))
}

/// One task per (template, route) for the routes present in the data.
pub fn build_tasks(gateway: &SqlGateway, templates: &[TaskTemplate]) -> Result<Vec<BenchmarkTask>, EvalError> {
    let routes = gateway
        .execute("SELECT DISTINCT route FROM dbo.Segments ORDER BY route", DEFAULT_MAX_ROWS, DEFAULT_TIMEOUT)
        .map_err(|e| EvalError::Dataset(e.log))?;
    let routes: Vec<String> = routes.rows.iter().map(|r| r[0].to_string()).collect();
    let mut tasks = Vec::new();
    for template in templates {
        for route in &routes {
            let task_id = format!("{}-{}", template.id, route_slug(route));
            let sql = template.sql.replace("{route}", route);
            let digest = ground_truth_digest(gateway, &task_id, &sql)?;
            tasks.push(BenchmarkTask {
                task_id,
                question: template.question.replace("{route}", route),
                ground_truth_sql: sql,
                digest,
                scenario_tag: template.tag,
            });
        }
    }
    Ok(tasks)
}

pub fn build_tasks_for_seed(seed: u64, templates: &[TaskTemplate]) -> Result<Vec<BenchmarkTask>, EvalError> {
    build_tasks(&reference_gateway(seed)?, templates)
}

pub fn tasks_to_jsonl(tasks: &[BenchmarkTask]) -> String {
    tasks.iter().map(|t| serde_json::to_string(t).expect("task serializes") + "\n").collect()
}

pub fn read_tasks_jsonl(text: &str) -> Result<Vec<BenchmarkTask>, EvalError> {
    text.lines()
        .enumerate()
        .filter(|(_, line)| !line.trim().is_empty())
        .map(|(i, line)| serde_json::from_str(line).map_err(|source| EvalError::TaskFile { line: i + 1, source }))
        .collect()
}
