fn main() {
    println!("tcd");
}
