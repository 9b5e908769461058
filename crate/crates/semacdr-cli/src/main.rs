fn main() {
    println!("semacdr");
}
