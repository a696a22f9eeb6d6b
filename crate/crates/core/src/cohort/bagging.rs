use crate::cohort::record::PatientRecord;

/// Feature ids of the events falling on one day.
pub type DayBlock = Vec<usize>;

/// Groups events into 1-day blocks by `floor(t / 24h)`. Days between the
/// first and last event stay as empty blocks; a record with no events
/// yields one empty block.
pub fn day_bagging(record: &PatientRecord) -> Vec<DayBlock> {
    let day = |t: f64| (t / 24.0).floor().max(0.0) as usize;
    let last = record.events.iter().map(|e| day(e.time_offset_hours)).max().unwrap_or(0);
    let mut blocks = vec![Vec::new(); last + 1];
    for e in &record.events {
        blocks[day(e.time_offset_hours)].push(e.feature_id);
    }
    blocks
}
