type pos = x | 1 <= x witness 1

ghost predicate IsFactor(p: pos, x: pos) {
  exists q :: p * q == x
}

ghost function Factors(x: pos): set<pos> {
  set p: pos | p <= x && IsFactor(p, x)
}

lemma Factor0(p: pos, y: pos, x: pos)
  requires exists a :: x == p*a
  requires exists b :: y == p*b
  ensures IsFactor(p, y + x)
