use memnorm::featurize::{
    encode_sentence, encode_token_window, label_token, TokenLabel, BLOCK, SEPARATOR, TARGET_OFFSET,
    WINDOW_FEATURES,
};
use proptest::prelude::*;

fn token() -> impl Strategy<Value = String> {
    prop_oneof!["[a-z0-9]{1,12}", "[а-я]{1,8}", "[A-Za-z0-9.,/-]{1,40}",]
}

fn decode_block(block: &[f64]) -> String {
    block
        .iter()
        .take_while(|&&v| v > 0.0)
        .map(|&v| char::from_u32(v as u32).unwrap())
        .collect()
}

proptest! {
    #[test]
    fn layout(prev in proptest::option::of(token()), t in token(), next in proptest::option::of(token())) {
        let v = encode_token_window(prev.as_deref(), &t, next.as_deref());
        prop_assert_eq!(v.len(), WINDOW_FEATURES);
        for k in [0, BLOCK + 1, 2 * (BLOCK + 1), WINDOW_FEATURES - 1] {
            prop_assert_eq!(v[k], SEPARATOR);
        }
        prop_assert!(v.iter().enumerate().all(|(i, &x)| x >= 0.0 || matches!(i, 0 | 31 | 62 | 93)));
        let head: String = t.chars().take(BLOCK).collect();
        prop_assert_eq!(decode_block(&v[TARGET_OFFSET..TARGET_OFFSET + BLOCK]), head);
    }

    #[test]
    fn distinct_short_tokens_encode_differently(a in "[a-z]{1,30}", b in "[a-z]{1,30}") {
        prop_assume!(a != b);
        prop_assert_ne!(encode_token_window(None, &a, None).to_vec(), encode_token_window(None, &b, None).to_vec());
    }

    #[test]
    fn identity_is_remain_same(x in token()) {
        prop_assert_eq!(label_token(&x, &x), TokenLabel::RemainSame);
    }

    #[test]
    fn sentence_windows_share_neighbours(tokens in proptest::collection::vec(token(), 1..8)) {
        let rows = encode_sentence(&tokens);
        prop_assert_eq!(rows.len(), tokens.len());
        for i in 1..rows.len() {
            // previous row's target block reappears as this row's prev block
            prop_assert_eq!(&rows[i - 1][TARGET_OFFSET..TARGET_OFFSET + BLOCK], &rows[i][1..1 + BLOCK]);
        }
        prop_assert!(rows[0][1..1 + BLOCK].iter().all(|&v| v == 0.0));
        prop_assert!(rows[rows.len() - 1][2 * (BLOCK + 1) + 1..WINDOW_FEATURES - 1].iter().all(|&v| v == 0.0));
    }
}
