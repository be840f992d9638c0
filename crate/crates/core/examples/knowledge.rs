//! What a symbolic attacker can derive from intercepted terms.

use evsec::adversary::Knowledge;
use evsec::crypto::{kdf_diversify, master_key, Term};

fn main() {
    let master = master_key("mk1");
    let card_key = kdf_diversify(&master, "04A1B2C3");
    let session = Term::atom("session-key");
    let wrapped = Term::enc(card_key.clone(), session.clone());

    let mut k = Knowledge::from_terms([wrapped, Term::atom("04A1B2C3")]);
    println!(
        "sniffed only: session key derivable = {}",
        k.can_derive(&session)
    );

    k.add(master.clone());
    println!(
        "with master key: card key = {}, session key = {}",
        k.can_derive(&card_key),
        k.can_derive(&session)
    );

    let digest = Term::hash(Term::atom("pin-1234"));
    let k = Knowledge::from_terms([digest]);
    println!(
        "from hash(pin): pin derivable = {}",
        k.can_derive(&Term::atom("pin-1234"))
    );
}
