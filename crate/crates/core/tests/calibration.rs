use pausim_core::calibrate::{agent_spectrum_std, calibrate, tube_pair_from_volumes, StdPooling, TubePair};
use pausim_core::grid::PixelBox;
use pausim_core::phantom;
use pausim_core::psf::PsfModel;
use pausim_core::simulate::synthesize_volume;
use pausim_core::spectrum::{synthetic, SpectrumTable, SpectrumUnit};
use pausim_core::wavelengths;

#[test]
fn co_located_tubes_recover_the_agent_spectrum() {
    let w = wavelengths::calibration();
    assert_eq!(w.len(), 35);
    let psf = PsfModel::default();
    let agent = synthesize_volume(&phantom::tube(synthetic::agent_table(), "agent", &w), &psf).unwrap();
    let reference = synthesize_volume(&phantom::tube(synthetic::reference_table(), "ref", &w), &psf).unwrap();
    let g = agent.grid;
    let (ix, iz) = g.nearest_index(1e-9, 8.0 + 1e-9).unwrap();
    let roi = PixelBox::centered3(ix, iz);
    let noise = PixelBox::new(0, 140, 3, 3);
    let alpha_ref = SpectrumTable::from_fn(&w, SpectrumUnit::PerCm, synthetic::reference_absorber).unwrap();
    let pair = tube_pair_from_volumes(&agent, &reference, &roi, &noise, &alpha_ref, StdPooling::default()).unwrap();
    let result = calibrate(&pair, Some(9)).unwrap();
    for (&wl, &a) in w.iter().zip(&result.alpha_agent.values) {
        let expect = synthetic::agent(wl);
        assert!((a - expect).abs() / expect < 0.01, "{wl} nm: {a} vs {expect}");
    }
    let poly = result.poly.unwrap();
    let peak = result.alpha_agent.values.iter().cloned().fold(0.0, f64::max);
    assert!(poly.rms_residual < 0.005 * peak);
}

#[test]
fn error_propagation_closed_form() {
    let pair = TubePair {
        wavelengths: vec![800.0],
        pa_agent: vec![2.0],
        pa_ref: vec![1.0],
        std_agent: vec![0.2],
        std_ref: vec![0.1],
        alpha_ref: SpectrumTable::new(vec![700.0, 900.0], vec![1.0, 1.0], None, SpectrumUnit::PerCm).unwrap(),
    };
    let r = calibrate(&pair, None).unwrap();
    assert_eq!(r.alpha_agent.values, vec![2.0]);
    let std = r.alpha_agent.std[0];
    assert!((std - 2.0 * 0.02f64.sqrt()).abs() <= 1e-12);
    assert_eq!(agent_spectrum_std(&pair, &[2.0]).unwrap()[0], std);
}
