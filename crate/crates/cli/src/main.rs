fn main() {
    println!("pyratext");
}
