# Quasiconformal imaging toolkit package
