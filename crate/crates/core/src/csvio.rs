//! Sensor CSV import/export: header `machine,tick,metric,value`, one metric per row.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{MachineId, Metric, SensorReading, TimeBase};

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    machine: String,
    tick: u64,
    metric: String,
    value: f64,
}

/// Parse sensor CSV rows into readings ordered by (tick, machine).
pub fn read_sensor_csv<R: Read>(reader: R, time_base: TimeBase) -> Result<Vec<SensorReading>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["machine", "tick", "metric", "value"] {
        return Err(Error::validation(format!(
            "expected header machine,tick,metric,value, got {}",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut grouped: BTreeMap<(u64, MachineId), SensorReading> = BTreeMap::new();
    for (idx, row) in rdr.deserialize::<Row>().enumerate() {
        let row = row?;
        let machine: MachineId = row.machine.parse()?;
        let metric: Metric = row
            .metric
            .parse()
            .map_err(|_| Error::validation(format!("row {}: unknown metric {:?}", idx + 2, row.metric)))?;
        grouped
            .entry((row.tick, machine))
            .or_insert_with(|| SensorReading::new(machine, row.tick, time_base.timestamp(row.tick)))
            .values
            .insert(metric, row.value);
    }
    Ok(grouped.into_values().collect())
}

pub fn write_sensor_csv<W: Write>(writer: W, readings: &[SensorReading]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    for r in readings {
        for (metric, value) in &r.values {
            wtr.serialize(Row {
                machine: r.machine.name().to_string(),
                tick: r.tick,
                metric: metric.name().to_string(),
                value: *value,
            })?;
        }
    }
    wtr.flush()?;
    Ok(())
}

/// Group readings by machine, preserving tick order.
pub fn by_machine(readings: &[SensorReading]) -> BTreeMap<MachineId, Vec<SensorReading>> {
    let mut out: BTreeMap<MachineId, Vec<SensorReading>> = BTreeMap::new();
    for r in readings {
        out.entry(r.machine).or_default().push(r.clone());
    }
    for series in out.values_mut() {
        series.sort_by_key(|r| r.tick);
    }
    out
}

/// Numeric table with named columns and a trailing `target` column.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub feature_names: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
}

pub fn read_feature_table<R: Read>(reader: R) -> Result<FeatureTable> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if headers.last().map(String::as_str) != Some("target") || headers.len() < 2 {
        return Err(Error::validation(
            "feature table needs at least one feature column and a trailing `target` column",
        ));
    }
    let mut rows = Vec::new();
    let mut targets = Vec::new();
    for (idx, record) in rdr.records().enumerate() {
        let record = record?;
        let mut values = Vec::with_capacity(record.len());
        for field in record.iter() {
            values.push(field.trim().parse::<f64>().map_err(|e| Error::Parse {
                line: idx + 2,
                column: values.len() + 1,
                message: e.to_string(),
            })?);
        }
        targets.push(values.pop().expect("non-empty record"));
        rows.push(values);
    }
    Ok(FeatureTable {
        feature_names: headers[..headers.len() - 1].to_vec(),
        rows,
        targets,
    })
}

pub fn write_feature_table<W: Write>(writer: W, table: &FeatureTable) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = table.feature_names.clone();
    header.push("target".to_string());
    wtr.write_record(&header)?;
    for (row, target) in table.rows.iter().zip(&table.targets) {
        let mut fields: Vec<String> = row.iter().map(f64::to_string).collect();
        fields.push(target.to_string());
        wtr.write_record(&fields)?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sensor_csv_round_trip() {
        let tb = TimeBase::default();
        let readings = vec![
            SensorReading::new(MachineId::AgingChamber, 0, tb.timestamp(0))
                .with(Metric::Temperature, 45.25)
                .with(Metric::Pressure, 101.0),
            SensorReading::new(MachineId::Agv, 0, tb.timestamp(0)).with(Metric::AgvLoad, 0.6),
            SensorReading::new(MachineId::AgingChamber, 1, tb.timestamp(1)).with(Metric::Temperature, 0.1 + 0.2),
        ];
        let mut buf = Vec::new();
        write_sensor_csv(&mut buf, &readings).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("machine,tick,metric,value\n"));
        let back = read_sensor_csv(buf.as_slice(), tb).unwrap();
        assert_eq!(back, readings);
    }

    #[test]
    fn unknown_machine_in_csv() {
        let text = "machine,tick,metric,value\nMixer,0,Temperature,1.0\n";
        assert!(matches!(
            read_sensor_csv(text.as_bytes(), TimeBase::default()),
            Err(Error::UnknownMachine(_))
        ));
    }

    #[test]
    fn feature_table_round_trip() {
        let table = FeatureTable {
            feature_names: vec!["a".into(), "b".into()],
            rows: vec![vec![1.0, 2.5], vec![-3.0, 0.125]],
            targets: vec![0.0, 1.0],
        };
        let mut buf = Vec::new();
        write_feature_table(&mut buf, &table).unwrap();
        assert_eq!(read_feature_table(buf.as_slice()).unwrap(), table);
    }
}
