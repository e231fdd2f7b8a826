//! Write a labeled, colored cloud as binary PLY and read it back; also
//! parse a small ASCII file.

use gpsm::pointcloud::{read_ply, write_ply};
use gpsm::synthetic::{room_class_set, room_scene};

fn main() -> gpsm::Result<()> {
    let cloud = room_scene(0)?.cloud()?;
    let mut bytes = Vec::new();
    write_ply(&cloud, &mut bytes)?;
    let back = read_ply(&bytes)?;
    println!(
        "{} points, {} bytes, identical after round trip: {}",
        cloud.len(),
        bytes.len(),
        back == cloud
    );
    let header_end = bytes
        .windows(11)
        .position(|w| w == b"end_header\n")
        .unwrap()
        + 11;
    print!("{}", String::from_utf8_lossy(&bytes[..header_end]));

    let ascii = b"ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nproperty ushort label\nend_header\n0 0 1 2\n1 1 1 65535\n";
    let small = read_ply(ascii)?;
    let names = room_class_set();
    for (p, l) in small.points().iter().zip(small.labels()) {
        let name = l
            .and_then(|id| names.index_of(id))
            .map(|j| names.get(j).unwrap().name.clone());
        println!("{p:?} -> {:?}", name.unwrap_or_else(|| "unlabeled".into()));
    }
    Ok(())
}
