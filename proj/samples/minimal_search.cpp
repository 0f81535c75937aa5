// Encodes a few synthetic spectra, stores their hypervectors in one CAM bank
// and searches it with a noisy replica.

#include <iostream>

#include "herp/cam.hpp"
#include "herp/encoder.hpp"

int main() {
  herp::SyntheticConfig syn;
  syn.n_peptides = 8;
  syn.spectra_per_peptide = 2;
  syn.shuffle = false;
  const auto spectra = herp::preprocess_all(herp::generate_synthetic(syn)).accepted;

  const herp::Encoder encoder(herp::EncoderConfig{});
  const herp::DeviceParams device;
  herp::EnergyLatencyLedger ledger;

  herp::CamBank bank(0, encoder.config().dim, device, 1);
  std::vector<std::pair<herp::ClusterId, herp::Hypervector>> rows;
  for (std::size_t i = 0; i < spectra.size(); i += 2) {
    rows.emplace_back(static_cast<herp::ClusterId>(i / 2), encoder.encode(spectra[i]));
  }
  herp::write_rows(bank, rows, device, ledger);

  const auto& query = spectra[5];  // second replica of peptide 2
  const auto result = herp::search(bank, encoder.encode(query), herp::CurrentModel{}, device, ledger);
  const auto winner = herp::lta_select(result, device, ledger);

  std::cout << "query " << query.id << " -> cluster " << bank.cluster_of_row(winner.index) << " at distance "
            << result.rows[winner.index].distance << "\n"
            << ledger.to_json().dump(2) << "\n";
}
