fn main() {
    let t0 = std::time::Instant::now();
    for scope in [pyratext_core::gradcheck::Scope::Op, pyratext_core::gradcheck::Scope::Module, pyratext_core::gradcheck::Scope::EndToEnd] {
        let start = std::time::Instant::now();
        let results = pyratext_core::gradcheck::run_suite(scope);
        for r in &results {
            println!("{:<28} max_rel_err {:.3e}  tol {:.0e}  {}", r.name, r.max_rel_err, r.tolerance, if r.passed() { "PASS" } else { "FAIL" });
        }
        println!("scope {:?} took {:?}", scope, start.elapsed());
    }
    println!("total {:?}", t0.elapsed());
}
