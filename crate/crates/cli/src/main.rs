fn main() {
    println!("cineseg");
}
