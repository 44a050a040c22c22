//! One-call analysis of a function: CFG, data map and annotated listing.

use crate::binary::{BinaryImage, FunctionBoundary};
use crate::cfg::{extract_cfg, serialize_cfg, CfgExtraction, DecodeError, Diagnostic};
use crate::datamap::{build_data_map, serialize_table, CandidatePool, DataMappingTable};

#[derive(Debug, Clone)]
pub struct FunctionArtifacts {
    pub extraction: CfgExtraction,
    pub table: DataMappingTable,
    pub cfg_json: String,
    pub table_json: String,
    /// Relabeled listing with substitution chains as trailing comments.
    pub listing: String,
    pub diagnostics: Vec<Diagnostic>,
}

pub fn analyze_function(
    image: &BinaryImage,
    pool: &CandidatePool,
    boundary: &FunctionBoundary,
    known_functions: &[FunctionBoundary],
    proximity_window: u64,
) -> Result<FunctionArtifacts, DecodeError> {
    let extraction = extract_cfg(image, boundary, known_functions)?;
    let (table, data_diags) = build_data_map(image, pool, &extraction.instructions, proximity_window);
    let mut diagnostics = extraction.diagnostics.clone();
    diagnostics.extend(data_diags);
    diagnostics.sort_by_key(|d| d.address);
    Ok(FunctionArtifacts {
        cfg_json: serialize_cfg(&extraction.cfg),
        table_json: serialize_table(&table),
        listing: annotated_listing(&extraction, &table),
        extraction,
        table,
        diagnostics,
    })
}

pub fn annotated_listing(extraction: &CfgExtraction, table: &DataMappingTable) -> String {
    let mut out = String::new();
    for block in &extraction.blocks {
        out.push_str(&block.label);
        out.push_str(":\n");
        for ins in &block.instructions {
            out.push_str("    ");
            out.push_str(&ins.text());
            let chains: Vec<String> =
                table.substitutions.iter().filter(|s| s.address == ins.vaddr).map(|s| s.chain()).collect();
            if !chains.is_empty() {
                out.push_str("    ; ");
                out.push_str(&chains.join("; "));
            }
            out.push('\n');
        }
    }
    out
}
