// Worked examples of Dafny calculational proofs (calc blocks).
// Each step relates two expressions with an operator; an optional
// hint group { ... } justifies the step with lemma calls or asserts.

function Sum(n: nat): nat {
  if n == 0 then 0 else n + Sum(n - 1)
}

lemma SumFormula(n: nat)
  ensures 2 * Sum(n) == n * (n + 1)
{
  if n == 0 {
  } else {
    calc {
      2 * Sum(n);
      ==  // definition of Sum for n > 0
      2 * (n + Sum(n - 1));
      ==
      2 * n + 2 * Sum(n - 1);
      == { SumFormula(n - 1); }
      2 * n + (n - 1) * n;
      ==
      n * (n + 1);
    }
  }
}

lemma SquareNonNegative(x: int)
  ensures x * x >= 0
{
  if x < 0 {
    calc {
      x * x;
      ==
      (-x) * (-x);
      >= { assert -x > 0; }
      0;
    }
  }
}

lemma AppendLength<T>(s: seq<T>, t: seq<T>)
  ensures |s + t| == |s| + |t|
{
  calc {
    |s + t|;
    ==
    |s| + |t|;
  }
}
