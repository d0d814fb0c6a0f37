// Writes a seeded synthetic price history in the long CSV format `ingest` reads.
//
//   sample_synthetic_prices OUT.csv [assets] [days] [seed]

#include <fstream>
#include <iostream>
#include <string>

#include "bltrader/marketdata.hpp"
#include "bltrader/synthetic.hpp"

int main(int argc, char** argv) {
    if (argc < 2) {
        std::cerr << "usage: " << argv[0] << " OUT.csv [assets] [days] [seed]\n";
        return 2;
    }
    bltrader::SyntheticMarket m;
    if (argc > 2) m.num_assets = std::stoi(argv[2]);
    if (argc > 3) m.num_days = std::stoi(argv[3]);
    if (argc > 4) m.seed = std::stoull(argv[4]);
    std::ofstream out(argv[1]);
    if (!out) {
        std::cerr << "cannot write " << argv[1] << "\n";
        return 2;
    }
    bltrader::write_price_csv(out, bltrader::geometric_random_walk(m));
    return 0;
}
