//! The schema catalog for the six traffic tables.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SemanticType {
    Text,
    Integer,
    Real,
    Timestamp,
}

impl SemanticType {
    pub fn sqlite_type(&self) -> &'static str {
        match self {
            SemanticType::Text | SemanticType::Timestamp => "TEXT",
            SemanticType::Integer => "INTEGER",
            SemanticType::Real => "REAL",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSchema {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: SemanticType,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableSchema {
    /// Schema-qualified name, e.g. `dbo.MinuteDataNW`.
    pub name: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
    pub columns: Vec<ColumnSchema>,
    /// Minute-resolution tables; unbounded scans over them are flagged.
    #[serde(default)]
    pub minute_resolution: bool,
}

impl TableSchema {
    /// Name without the schema prefix.
    pub fn bare_name(&self) -> &str {
        self.name.rsplit('.').next().unwrap_or(&self.name)
    }

    pub fn schema_name(&self) -> Option<&str> {
        self.name.rsplit_once('.').map(|(schema, _)| schema)
    }

    pub fn column(&self, name: &str) -> Option<&ColumnSchema> {
        self.columns.iter().find(|c| c.name.eq_ignore_ascii_case(name))
    }

    pub fn column_names(&self) -> Vec<String> {
        self.columns.iter().map(|c| c.name.clone()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaCatalog {
    pub tables: Vec<TableSchema>,
}

impl SchemaCatalog {
    /// Resolves `dbo.X`, `X` (any case) to a table.
    pub fn table(&self, name: &str) -> Option<&TableSchema> {
        self.tables.iter().find(|t| {
            t.name.eq_ignore_ascii_case(name) || (!name.contains('.') && t.bare_name().eq_ignore_ascii_case(name))
        })
    }

    pub fn table_names(&self) -> Vec<&str> {
        self.tables.iter().map(|t| t.name.as_str()).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("catalog serializes")
    }

    pub fn from_json(raw: &str) -> serde_json::Result<Self> {
        serde_json::from_str(raw)
    }

    /// The six-table traffic database.
    pub fn traffic() -> Self {
        use SemanticType::*;
        fn col(name: &str, ty: SemanticType, description: &str) -> ColumnSchema {
            ColumnSchema { name: name.to_string(), ty, description: description.to_string() }
        }
        SchemaCatalog {
            tables: vec![
                TableSchema {
                    name: "dbo.cabinets".into(),
                    description: "Loop detector details: unit name, coordinate, route, milepost, direction, lane class and owning segment.".into(),
                    minute_resolution: false,
                    columns: vec![
                        col("detector_id", Text, "unique loop detector id"),
                        col("unit_name", Text, "human readable detector name"),
                        col("cabinet_id", Text, "cabinet station id; joins to cabinfo"),
                        col("route", Text, "route label such as 'I-5' or 'SR-520'"),
                        col("direction", Text, "travel direction: N, S, E or W"),
                        col("milepost", Real, "milepost of the detector station"),
                        col("latitude", Real, "decimal degrees"),
                        col("longitude", Real, "decimal degrees"),
                        col("lane_class", Text, "'GP' (general purpose) or 'HOV' (carpool)"),
                        col("segment_id", Text, "segment the detector belongs to; joins to Segments"),
                    ],
                },
                TableSchema {
                    name: "dbo.cabinfo".into(),
                    description: "District location of loop detector cabinets by cabinet station id.".into(),
                    minute_resolution: false,
                    columns: vec![
                        col("cabinet_id", Text, "cabinet station id"),
                        col("station_name", Text, "station label"),
                        col("district", Text, "operating district"),
                        col("county", Text, "county name"),
                        col("route", Text, "route label"),
                        col("milepost", Real, "milepost of the cabinet"),
                    ],
                },
                TableSchema {
                    name: "dbo.MinuteDataNW".into(),
                    description: "One-minute speed, volume and occupancy per loop detector, sorted by detector id and timestamp.".into(),
                    minute_resolution: true,
                    columns: vec![
                        col("detector_id", Text, "loop detector id; joins to cabinets"),
                        col("timestamp", Timestamp, "UTC minute, 'YYYY-MM-DDTHH:MM:SSZ'"),
                        col("local_time", Timestamp, "local wall-clock minute, 'YYYY-MM-DD HH:MM:SS'"),
                        col("speed", Real, "mph"),
                        col("volume", Integer, "vehicles in the minute"),
                        col("occupancy", Real, "fraction of time occupied, 0 to 1"),
                    ],
                },
                TableSchema {
                    name: "dbo.Segments".into(),
                    description: "Road segment definitions with route, direction and milepost range.".into(),
                    minute_resolution: false,
                    columns: vec![
                        col("segment_id", Text, "unique segment id"),
                        col("route", Text, "route label"),
                        col("direction", Text, "travel direction"),
                        col("begin_milepost", Real, "start milepost"),
                        col("end_milepost", Real, "end milepost"),
                        col("length_miles", Real, "segment length in miles"),
                    ],
                },
                TableSchema {
                    name: "dbo.SegmentTrafficIndex".into(),
                    description: "Per-minute segment performance on general purpose and carpool lanes: speed, volume and TPS.".into(),
                    minute_resolution: true,
                    columns: vec![
                        col("segment_id", Text, "segment id"),
                        col("route", Text, "route label"),
                        col("timestamp", Timestamp, "UTC minute"),
                        col("local_time", Timestamp, "local wall-clock minute"),
                        col("lane_class", Text, "'GP' or 'HOV'"),
                        col("avg_speed", Real, "volume-weighted mean speed, mph"),
                        col("total_volume", Integer, "vehicles in the minute across the lane class"),
                        col("tps", Real, "traffic performance score, 0 to 100"),
                    ],
                },
                TableSchema {
                    name: "dbo.TrafficIndex".into(),
                    description: "Daily statistics per segment and lane class.".into(),
                    minute_resolution: false,
                    columns: vec![
                        col("segment_id", Text, "segment id"),
                        col("local_date", Text, "local calendar date 'YYYY-MM-DD'"),
                        col("day_of_week", Text, "'Monday' .. 'Sunday'"),
                        col("lane_class", Text, "'GP' or 'HOV'"),
                        col("avg_tps", Real, "mean TPS over the day"),
                        col("min_tps", Real, "lowest minute TPS"),
                        col("max_tps", Real, "highest minute TPS"),
                        col("avg_speed", Real, "mean speed, mph"),
                        col("vmt", Real, "vehicle miles of travel for the day"),
                    ],
                },
            ],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resolves_qualified_and_bare_names() {
        let catalog = SchemaCatalog::traffic();
        assert_eq!(catalog.tables.len(), 6);
        assert_eq!(catalog.table("dbo.minutedatanw").unwrap().name, "dbo.MinuteDataNW");
        assert_eq!(catalog.table("Segments").unwrap().name, "dbo.Segments");
        assert!(catalog.table("other.Segments").is_none());
        assert!(catalog.table("dbo.Nope").is_none());
    }

    #[test]
    fn names_unique() {
        let catalog = SchemaCatalog::traffic();
        let mut names: Vec<_> = catalog.tables.iter().map(|t| t.name.to_lowercase()).collect();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), 6);
        for t in &catalog.tables {
            let mut cols: Vec<_> = t.columns.iter().map(|c| c.name.to_lowercase()).collect();
            cols.sort();
            cols.dedup();
            assert_eq!(cols.len(), t.columns.len(), "{}", t.name);
        }
    }

    #[test]
    fn json_round_trip() {
        let catalog = SchemaCatalog::traffic();
        assert_eq!(SchemaCatalog::from_json(&catalog.to_json()).unwrap(), catalog);
    }
}
