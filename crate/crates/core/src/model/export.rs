use std::io::Write;

use super::forward::AttnRecord;

pub const ATTENTION_CSV_HEADER: &str = "layer,head,query_token,key_token,weight";

/// One row per attention weight; query and key columns hold flat token
/// indices from the record's plan.
pub fn write_attention_csv<W: Write>(out: &mut W, record: &AttnRecord) -> std::io::Result<()> {
    writeln!(out, "{ATTENTION_CSV_HEADER}")?;
    for (l, layer) in record.weights.iter().enumerate() {
        for (h, a) in layer.iter().enumerate() {
            for (qi, &q) in record.plan.masked.iter().enumerate() {
                for (ki, &k) in record.plan.unmasked.iter().enumerate() {
                    writeln!(out, "{l},{h},{q},{k},{}", a.get2(qi, ki))?;
                }
            }
        }
    }
    Ok(())
}
