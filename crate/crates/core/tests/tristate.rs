// SPDX-License-Identifier: Apache-2.0

mod common;

use common::harness::{grid_oracle, tristate_grid, GRID_ENCLAVE};
use proptest::prelude::*;
use sgx_symex::expr::Expr;
use sgx_symex::loader::Section;
use sgx_symex::sgx::{outside_enclave, outside_enclave_concrete, within_enclave, within_enclave_concrete};

#[test]
fn hooks_match_the_byte_oracle_on_the_grid() {
    let g = tristate_grid();
    assert_eq!(g.cases, 49 * 16);
    assert!(g.mismatches.is_empty(), "{:#?}", g.mismatches);
}

#[test]
fn overlap_is_neither_inside_nor_outside() {
    let e = GRID_ENCLAVE;
    assert_eq!(grid_oracle(e.base - 4, 8, &e), (false, false));
    assert_eq!(grid_oracle(e.end() - 4, 8, &e), (false, false));
    assert_eq!(grid_oracle(e.base - 1, 16 + 2, &e), (false, false));
    assert!(!within_enclave_concrete(e.base - 4, 8, &e));
    assert!(!outside_enclave_concrete(e.base - 4, 8, &e));
}

proptest! {
    #[test]
    fn formulas_fold_to_the_concrete_predicates(
        base in 0x1000u64..0x1_0000_0000,
        size in 1u64..0x10_0000,
        addr: u64,
        len in 0u64..0x20_0000,
    ) {
        let enclave = Section { base, size };
        let a = Expr::konst(64, addr);
        let n = Expr::konst(64, len);
        prop_assert_eq!(within_enclave(&a, &n, &enclave).as_const(), Some(within_enclave_concrete(addr, len, &enclave) as u64));
        prop_assert_eq!(outside_enclave(&a, &n, &enclave).as_const(), Some(outside_enclave_concrete(addr, len, &enclave) as u64));
    }

    #[test]
    fn non_empty_ranges_are_never_both(addr: u64, len in 1u64..u64::MAX) {
        let e = Section { base: 0x10_0000, size: 0x4_0000 };
        prop_assert!(!(within_enclave_concrete(addr, len, &e) && outside_enclave_concrete(addr, len, &e)));
    }
}
