mod common;

#[tokio::test(flavor = "multi_thread")]
async fn ten_thousand_random_envelopes() {
    common::checks::fuzz_envelopes(10_000).await;
}
