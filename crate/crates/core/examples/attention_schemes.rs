//! Passage scores from one cross-attention tensor under each aggregation scheme.

use funnelrag::rank::{aggregate_attention, select_representative_tokens, synthetic_attention, AggregationScheme, Scheme};

fn main() -> funnelrag::Result<()> {
    // 8 layers, 2 heads, 12 tokens of which the first 3 belong to the query.
    let tensor = synthetic_attention(42, 8, 2, 12, 3)?;
    let reps = select_representative_tokens(&tensor, 4, false)?;
    println!("layer 0 head 0 representative tokens: {:?}", reps.get(0, 0));

    for scheme in Scheme::ALL {
        let s = aggregate_attention(&tensor, &AggregationScheme::new(scheme, 4))?;
        println!("{:<15} {:.6}", scheme.as_str(), s);
    }
    let with_query = AggregationScheme::default().with_query_tokens(true);
    println!("mean-rep incl. query tokens {:.6}", aggregate_attention(&tensor, &with_query)?);
    Ok(())
}
